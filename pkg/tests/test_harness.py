import copy
import csv
import hashlib
import json
from importlib import resources

import jsonschema
import pytest

from contentsdn import cli
from contentsdn.harness import (FileSpec, Report, ScenarioError, Simulation, default_manifest,
                                default_scenario, emit_report, generate_files, load_report,
                                load_scenario, run_scenario)
from contentsdn.harness import sim as sim_mod
from contentsdn.harness.scenario import OriginFile

from _topo import line_doc


def small_doc(files=(("a.bin", 3000), ("b.bin", 50_000), ("c.bin", 200_000)), passes=2,
              gap_ms=1000, **config):
    """Line topology, each file fetched ``passes`` times in order."""
    doc = {
        "name": "small",
        "topology": line_doc(),
        "files": [{"name": n, "size": s, "seed": i} for i, (n, s) in enumerate(files)],
        "requests": [],
        "config": config,
    }
    t = 0
    for _ in range(passes):
        for name, _size in files:
            doc["requests"].append({"at_ms": t, "client": "client", "file": name})
            t += gap_ms
    return doc


@pytest.fixture(scope="module")
def small_report():
    return run_scenario(load_scenario(small_doc()))


# -- scenario loading ------------------------------------------------------

def _broken(mutate):
    doc = small_doc()
    mutate(doc)
    return doc


@pytest.mark.parametrize("mutate, needle", [
    (lambda d: d.pop("topology"), "topology"),
    (lambda d: d.update(roles={"proxy": "proxy", "mirror": "x"}), "unknown roles"),
    (lambda d: d.update(roles={"caches": ["nope"]}), "not in the topology"),
    (lambda d: d["config"].update(turbo=True), "unknown config keys"),
    (lambda d: d["config"].update(duplicate_rate=2), "duplicate_rate"),
    (lambda d: d["config"].update(reorder_seed="x"), "reorder_seed"),
    (lambda d: d.update(files=[]), "manifest is empty"),
    (lambda d: d["files"][0].update(size=0), "size > 0"),
    (lambda d: d["files"].append(dict(d["files"][0])), "duplicate file names"),
    (lambda d: d["files"][0].update(origin="elsewhere"), "unknown origin"),
    (lambda d: d["requests"].append({"at_ms": 1, "client": "client", "file": "zzz"}),
     "not in the manifest"),
    (lambda d: d["requests"].append({"at_ms": 1, "client": "cache", "file": "a.bin"}),
     "not a client host"),
    (lambda d: d["requests"].append({"at_ms": -1, "client": "client", "file": "a.bin"}),
     ">= 0"),
    (lambda d: d["requests"].append({"client": "client", "file": "a.bin"}), "bad request"),
    (lambda d: d.update(requests=[]), "request script is empty"),
    (lambda d: d["topology"]["links"].pop(), "topology"),
])
def test_invalid_scenarios_are_rejected(mutate, needle):
    with pytest.raises(ScenarioError, match="invalid scenario") as info:
        load_scenario(_broken(mutate))
    assert needle in str(info.value)


def test_client_must_sit_on_client_switch():
    doc = small_doc()
    doc["topology"]["hosts"].append({"id": "far", "switch": "s3", "ip": "10.0.3.1"})
    doc["topology"]["links"].append({"a": "far", "b": "s3", "latency_ms": 1})
    doc["requests"].append({"at_ms": 0, "client": "far", "file": "a.bin"})
    with pytest.raises(ScenarioError, match="client switch"):
        load_scenario(doc)


def test_topology_file_is_relative_to_scenario(tmp_path):
    doc = small_doc()
    (tmp_path / "topo.json").write_text(json.dumps(doc.pop("topology")))
    doc["topology_file"] = "topo.json"
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(doc))
    sc = load_scenario(path)
    assert set(sc.topology.switches) == {"s1", "s2", "s3"}
    doc["topology_file"] = "missing.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ScenarioError, match="topology_file"):
        load_scenario(path)


def test_bad_json_is_a_scenario_error(tmp_path):
    path = tmp_path / "sc.json"
    path.write_text("{not json")
    with pytest.raises(ScenarioError, match="not valid JSON"):
        load_scenario(path)


def test_defaults_and_round_trip():
    sc = load_scenario(small_doc())
    assert (sc.proxy, sc.caches, sc.origins, sc.client_switch) == ("proxy", ["cache"],
                                                                   ["origin"], "s1")
    assert sc.config["mtu"] == 1460 and sc.config["controller_down"] is False
    again = load_scenario(json.loads(json.dumps(sc.to_dict())))
    assert again.to_dict() == sc.to_dict()


# -- content generation ----------------------------------------------------

def test_generate_files_is_deterministic_and_seed_sensitive():
    specs = [FileSpec("a.bin", 5000, 1), FileSpec("b.bin", 5000, 1)]
    one, two = generate_files(specs), generate_files(specs)
    assert one == two
    assert one["a.bin"].body != one["b.bin"].body           # name feeds the generator
    assert generate_files([FileSpec("a.bin", 5000, 2)])["a.bin"].body != one["a.bin"].body
    for f in one.values():
        assert len(f.body) == 5000 and f.digest == hashlib.sha256(f.body).hexdigest()


def test_generate_files_rejects_empty():
    with pytest.raises(ScenarioError):
        generate_files([FileSpec("z", 0, 0)])


def test_default_manifest_is_log_spaced():
    m = default_manifest()
    sizes = [f.size for f in m]
    assert len(m) == 12 and sizes[0] == 2 * 1024 and sizes[-1] == 6 * 1024 * 1024
    ratios = [b / a for a, b in zip(sizes, sizes[1:])]
    assert max(ratios) - min(ratios) < 0.01
    assert [(f.name, f.size) for f in default_scenario().files] == [(f.name, f.size) for f in m]


def test_default_scenario_fetches_every_file_twice():
    sc = default_scenario()
    counts = {}
    for r in sc.requests:
        counts[r.file] = counts.get(r.file, 0) + 1
    assert set(counts.values()) == {2} and len(counts) == 12


# -- running ---------------------------------------------------------------

def test_small_run_hits_on_second_fetch(small_report):
    rep = small_report
    agg = rep.aggregates
    assert (agg["requests"], agg["succeeded"], agg["hits"], agg["misses"]) == (6, 6, 3, 3)
    for name, recs in rep.by_file().items():
        assert [r.served_by for r in recs] == ["origin", "cache"]
        assert all(r.body_digest == rep.manifest[name]["digest"] for r in recs)
    assert agg["origin_requests"] == {"a.bin": 1, "b.bin": 1, "c.bin": 1}
    assert agg["mean_hit_latency_ms"] < agg["mean_miss_latency_ms"]


def test_record_invariants(small_report):
    for r in small_report.records:
        assert r.ok and r.error is None and r.status == 200
        assert r.end_ms >= r.start_ms
        assert r.latency_ms == pytest.approx(r.end_ms - r.start_ms)
        assert r.bytes == small_report.manifest[r.file_name]["size"]
        assert r.processing_ms >= 0


def test_config_echo(small_report):
    cfg = small_report.config
    assert cfg["scenario"]["mtu"] == 1460
    assert cfg["controller"]["heartbeat_interval_s"] == 5
    assert cfg["roles"] == {"proxy": "proxy", "caches": ["cache"], "origins": ["origin"],
                            "client_switch": "s1"}


def test_report_json_and_csv(small_report, tmp_path):
    paths = emit_report(small_report, tmp_path, csv_output=True)
    assert [p.name for p in paths] == ["report.json", "requests.csv"]
    assert load_report(paths[0]) == small_report
    with open(paths[1], newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == len(small_report.records) + 1
    assert rows[0][:3] == ["index", "file_name", "client"]


def test_report_matches_schema(small_report, tmp_path):
    schema_path = resources.files("contentsdn.harness") / "data" / "report.schema.json"
    schema = json.loads(schema_path.read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    emit_report(small_report, tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    jsonschema.validate(doc, schema)
    doc["records"][0]["surprise"] = 1
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(doc, schema)


def test_runs_are_reproducible(small_report):
    again = run_scenario(load_scenario(small_doc()))
    assert again.trace_digest == small_report.trace_digest
    assert json.dumps(again.reproducible_view(), sort_keys=True) == \
        json.dumps(small_report.reproducible_view(), sort_keys=True)


def test_reordered_and_duplicated_delivery_still_correct(small_report):
    rep = run_scenario(load_scenario(small_doc(reorder_seed=3, duplicate_rate=0.2)))
    assert rep.aggregates["hits"] == 3 and rep.aggregates["succeeded"] == 6
    assert rep.injections > small_report.injections
    assert rep.trace_digest != small_report.trace_digest


def test_controller_down_fails_open():
    rep = run_scenario(load_scenario(small_doc(controller_down=True)))
    assert rep.aggregates["succeeded"] == 6 and rep.aggregates["hits"] == 0
    assert set(rep.aggregates["origin_requests"].values()) == {2}


def test_session_survives_long_gaps_via_heartbeats():
    # 40 s between fetches: far beyond the 15 s expiry without heartbeats
    rep = run_scenario(load_scenario(small_doc(files=(("a.bin", 4000),), gap_ms=40_000)))
    assert [r.served_by for r in rep.records] == ["origin", "cache"]


def test_eviction_does_not_leave_dangling_redirects():
    files = (("a.bin", 60_000), ("b.bin", 60_000))
    rep = run_scenario(load_scenario(small_doc(files=files, passes=3,
                                               cache_capacity_bytes=100_000)))
    # the cache holds one file at a time, so alternating fetches always miss
    assert rep.aggregates["succeeded"] == 6
    assert [r.served_by for r in rep.records] == ["origin"] * 6


def test_capacity_one_file_keeps_hitting_the_survivor():
    files = (("a.bin", 60_000), ("b.bin", 60_000))
    doc = small_doc(files=files, passes=1, cache_capacity_bytes=100_000)
    doc["requests"] += [{"at_ms": 5000, "client": "client", "file": "b.bin"},
                        {"at_ms": 6000, "client": "client", "file": "a.bin"}]
    rep = run_scenario(load_scenario(doc))
    assert [r.served_by for r in rep.records] == ["origin", "origin", "cache", "origin"]
    assert rep.aggregates["succeeded"] == 4


def test_index_name_used_for_root(tmp_path):
    doc = small_doc(files=(("home.htm", 1000),), index_name="home.htm")
    rep = run_scenario(load_scenario(doc))
    assert rep.aggregates["hits"] == 1


def test_strict_run_names_the_corrupted_request(monkeypatch):
    real = sim_mod.generate_files

    def lying(files):
        out = real(files)
        f = out["b.bin"]
        out["b.bin"] = OriginFile(f.name, f.body, "0" * 64)
        return out
    monkeypatch.setattr(sim_mod, "generate_files", lying)
    sc = load_scenario(small_doc())
    with pytest.raises(ScenarioError, match=r"request #1 \(b.bin\)") as info:
        run_scenario(sc)
    rep = info.value.report
    assert rep.aggregates["succeeded"] == 4
    bad = [r for r in rep.records if not r.ok]
    assert {r.file_name for r in bad} == {"b.bin"}
    assert "digest mismatch" in bad[0].error
    assert run_scenario(sc, strict=False).aggregates["succeeded"] == 4


def test_simulation_keeps_content_dir_when_given(tmp_path):
    sc = load_scenario(small_doc(files=(("a.bin", 1000),), passes=1))
    Simulation(sc, content_dir=tmp_path).run()
    assert any((tmp_path / "cache").iterdir())


# -- CLI -------------------------------------------------------------------

def _write(tmp_path, doc, name="sc.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_cli_validate(tmp_path, capsys):
    assert cli.main(["validate", "--scenario", _write(tmp_path, small_doc())]) == 0
    assert capsys.readouterr().out.startswith("ok: small: 3 switches")
    bad = copy.deepcopy(small_doc())
    bad["files"] = []
    assert cli.main(["validate", "--scenario", _write(tmp_path, bad)]) == 1
    assert "manifest is empty" in capsys.readouterr().err


def test_cli_run_writes_report_and_csv(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", "--scenario", _write(tmp_path, small_doc()), "--out", str(out),
                     "--csv"])
    assert code == 0
    assert (out / "report.json").exists() and (out / "requests.csv").exists()
    assert "6/6 ok, hits=3 misses=3" in capsys.readouterr().out


def test_cli_run_exit_codes(tmp_path, monkeypatch):
    assert cli.main(["run", "--scenario", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path)]) == 2
    real = sim_mod.generate_files

    def lying(files):
        out = real(files)
        out["a.bin"] = OriginFile("a.bin", out["a.bin"].body, "f" * 64)
        return out
    monkeypatch.setattr(sim_mod, "generate_files", lying)
    out = tmp_path / "failed"
    assert cli.main(["run", "--scenario", _write(tmp_path, small_doc()),
                     "--out", str(out)]) == 1
    assert (out / "report.json").exists()     # the partial report is still written


def test_cli_log_level_accepted_after_subcommand(tmp_path):
    assert cli.main(["validate", "--scenario", _write(tmp_path, small_doc()),
                     "--log-level", "info"]) == 0


def test_report_from_dict_rejects_unknown_fields(small_report):
    doc = small_report.to_dict()
    doc["records"][0]["extra"] = 1
    with pytest.raises(TypeError):
        Report.from_dict(doc)
