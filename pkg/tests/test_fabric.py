import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contentsdn.fabric import (Drop, Duplicate, Fabric, FlowKey, FlowMatch, FlowRule, Forward,
                               InvalidRuleError, Packet, RewriteDst, TopologyError,
                               UnknownNodeError, UnknownRuleError, load_topology)
from contentsdn.harness.scenario import default_scenario

from _topo import brute_shortest, line_doc, nx_graph, random_doc


def tiny_doc():
    return {"switches": ["s1"],
            "hosts": [{"id": "h1", "switch": "s1"}, {"id": "h2", "switch": "s1"}],
            "links": [{"a": "h1", "b": "s1", "latency_ms": 1.5},
                      {"a": "h2", "b": "s1", "latency_ms": 2}]}


def pkt(src="10.0.2.1", sport=80, dst="10.0.0.2", dport=40000, payload=b"x", **kw):
    return Packet(FlowKey(src, sport, dst, dport), payload, **kw)


# -- load_topology ---------------------------------------------------------

def test_smallest_topology_loads():
    topo = load_topology(tiny_doc())
    assert topo.switches == {"s1"}
    assert topo.hosts == {"h1": "s1", "h2": "s1"}
    assert topo.latency("h1", "s1") == Fraction(3, 2)
    assert topo.ip_of("h1") == "h1"          # ip defaults to the id


def test_json_text_accepted():
    assert load_topology(json.dumps(tiny_doc())).hosts == {"h1": "s1", "h2": "s1"}


def test_default_harness_topology_is_valid():
    topo = default_scenario().topology
    assert topo.switches == {"s1", "s2", "s3"}
    assert topo.hosts == {"client": "s1", "proxy": "s1", "cache": "s2", "origin": "s3"}


@pytest.mark.parametrize("mutate, fragment", [
    (lambda d: d["hosts"][0].update(switch="nope"), "unknown switch"),
    (lambda d: d["switches"].append("h1"), "duplicate node id"),
    (lambda d: d["links"].append({"a": "h1", "b": "h2", "latency_ms": 1}), "host-to-host"),
    (lambda d: d["links"].append({"a": "s1", "b": "s1", "latency_ms": 1}), "self-loop"),
    (lambda d: d["links"][0].update(latency_ms=-1), "latency"),
    (lambda d: d["links"][0].update(latency_ms=float("inf")), "latency"),
    (lambda d: d["links"].pop(), "exactly one link"),
    (lambda d: d["links"].append({"a": "h1", "b": "s1", "latency_ms": 1}), "more than one"),
    (lambda d: d["links"].append({"a": "h1", "b": "zz", "latency_ms": 1}), "not a known node"),
    (lambda d: d.update(switches=[]), "at least one switch"),
    (lambda d: d["hosts"][1].update(ip="h1"), "unique"),
    (lambda d: d["hosts"][0].update(id=""), "non-empty"),
])
def test_invalid_topologies_name_the_violation(mutate, fragment):
    doc = tiny_doc()
    mutate(doc)
    with pytest.raises(TopologyError, match=fragment):
        load_topology(doc)


def test_disconnected_topology_rejected():
    doc = tiny_doc()
    doc["switches"].append("s2")
    with pytest.raises(TopologyError, match="disconnected"):
        load_topology(doc)


def test_bad_json_rejected():
    with pytest.raises(TopologyError, match="JSON"):
        load_topology("{not json")


def test_topology_document_round_trip():
    topo = load_topology(line_doc())
    assert load_topology(topo.to_document()) == topo


# -- rules -----------------------------------------------------------------

def test_install_nat_style_rule_returns_id():
    fab = Fabric(load_topology(line_doc()))
    rid = fab.install_rule("s1", FlowRule(FlowMatch(dst_port=80), [Forward("proxy")], 100))
    assert rid and fab.rules("s1")[0].rule_id == rid


def test_rule_invariants():
    with pytest.raises(InvalidRuleError):
        FlowRule(FlowMatch(dst_port=80), [])
    with pytest.raises(InvalidRuleError):
        FlowRule(FlowMatch(dst_port=80), [Duplicate("s2")])
    with pytest.raises(InvalidRuleError):
        FlowRule(FlowMatch(dst_port=80), [Forward("a"), Forward("b")])
    with pytest.raises(InvalidRuleError):
        FlowRule(FlowMatch(dst_port=80), [Duplicate("a"), Drop()])
    with pytest.raises(InvalidRuleError):
        FlowMatch()
    with pytest.raises(InvalidRuleError):
        FlowRule(FlowMatch(dst_port=80), [Drop()], priority=-1)


def test_install_checks_switch_and_neighbors():
    fab = Fabric(load_topology(line_doc()))
    with pytest.raises(UnknownNodeError):
        fab.install_rule("s9", FlowRule(FlowMatch(dst_port=80), [Drop()]))
    with pytest.raises(InvalidRuleError, match="neighbor"):
        fab.install_rule("s1", FlowRule(FlowMatch(dst_port=80), [Forward("s3")]))


def test_remove_rule_then_remove_again():
    fab = Fabric(load_topology(line_doc()))
    rid = fab.install_rule("s1", FlowRule(FlowMatch(dst_port=40000), [Forward("proxy")]))
    assert fab.match_rule("s1", pkt()) is not None
    fab.remove_rule("s1", rid)
    assert fab.match_rule("s1", pkt()) is None
    with pytest.raises(UnknownRuleError):
        fab.remove_rule("s1", rid)


def test_match_strict_priority():
    fab = Fabric(load_topology(line_doc()))
    fab.install_rule("s1", FlowRule(FlowMatch(src_ip="10.0.2.1"), [Forward("client")], 5))
    hi = fab.install_rule("s1", FlowRule(FlowMatch(dst_port=40000), [Forward("proxy")], 10))
    assert fab.match_rule("s1", pkt()).rule_id == hi


def test_match_empty_table_is_none():
    assert Fabric(load_topology(line_doc())).match_rule("s2", pkt()) is None


def test_equal_priority_earliest_install_wins():
    fab = Fabric(load_topology(line_doc()))
    first = fab.install_rule("s1", FlowRule(FlowMatch(dst_port=40000), [Forward("proxy")], 10))
    fab.install_rule("s1", FlowRule(FlowMatch(src_port=80), [Forward("client")], 10))
    assert fab.match_rule("s1", pkt()).rule_id == first


_match_fields = st.fixed_dictionaries({}, optional={
    "src_ip": st.sampled_from(["a", "b"]), "dst_ip": st.sampled_from(["a", "b"]),
    "src_port": st.sampled_from([80, 81]), "dst_port": st.sampled_from([80, 81])})


@settings(max_examples=200, deadline=None)
@given(specs=st.lists(st.tuples(_match_fields.filter(bool), st.integers(0, 3)),
                      min_size=1, max_size=8),
       key=st.tuples(st.sampled_from(["a", "b"]), st.sampled_from([80, 81]),
                     st.sampled_from(["a", "b"]), st.sampled_from([80, 81])))
def test_priority_soundness_against_brute_force(specs, key):
    fab = Fabric(load_topology(tiny_doc()))
    installed = []
    for i, (fields, prio) in enumerate(specs):
        rid = fab.install_rule("s1", FlowRule(FlowMatch(**fields), [Forward("h1")], prio))
        installed.append((fields, prio, i, rid))
    p = Packet(FlowKey(*key))
    values = {"src_ip": key[0], "src_port": key[1], "dst_ip": key[2], "dst_port": key[3]}
    hits = [(-prio, i, rid) for fields, prio, i, rid in installed
            if all(values[f] == v for f, v in fields.items())]
    got = fab.match_rule("s1", p)
    if not hits:
        assert got is None
    else:
        assert got.rule_id == min(hits)[2]


# -- forwarding ------------------------------------------------------------

def test_single_switch_forward():
    fab = Fabric(load_topology(tiny_doc()))
    fab.install_rule("s1", FlowRule(FlowMatch(dst_ip="h2"), [Forward("h2")]))
    trace = fab.inject_packet("h1", Packet(FlowKey("h1", 1, "h2", 2), b"hi"))
    assert trace.delivered_to == {"h2"}
    assert trace.latency_ms == 3.5


def test_no_rule_at_ingress_is_recorded_drop():
    fab = Fabric(load_topology(tiny_doc()))
    trace = fab.inject_packet("h1", Packet(FlowKey("h1", 1, "h2", 2)))
    assert trace.delivered_to == frozenset()
    assert trace.hops[-1] == (0, "s1", "drop:no-match")


def _fork_fabric():
    fab = Fabric(load_topology(line_doc(latencies=(2, 40))))
    m = FlowMatch(src_ip="10.0.2.1", src_port=80)
    fab.install_rule("s3", FlowRule(m, [Forward("s2")]))
    fab.install_rule("s2", FlowRule(m, [Duplicate("cache"), Forward("s1")]))
    fab.install_rule("s1", FlowRule(m, [Forward("proxy")]))
    return fab


def test_fork_delivers_to_proxy_and_cache():
    trace = _fork_fabric().inject_packet("origin", pkt(payload=b"payload"))
    assert trace.delivered_to == {"proxy", "cache"}
    copies = {d.host: d for d in trace.deliveries}
    assert len(trace.deliveries) == 2
    assert copies["proxy"].packet.payload == copies["cache"].packet.payload == b"payload"
    assert copies["cache"].packet.forked and not copies["proxy"].packet.forked
    assert copies["proxy"].latency_ms == pytest.approx(42.2)
    assert copies["cache"].latency_ms == pytest.approx(40.2)


def test_removing_fork_rule_stops_duplication():
    fab = _fork_fabric()
    fork = next(r for r in fab.rules("s2") if any(isinstance(a, Duplicate) for a in r.actions))
    fab.remove_rule("s2", fork.rule_id)
    fab.install_rule("s2", FlowRule(FlowMatch(src_ip="10.0.2.1"), [Forward("s1")]))
    assert fab.inject_packet("origin", pkt()).delivered_to == {"proxy"}


def test_rewrite_dst_changes_later_matching():
    fab = Fabric(load_topology(line_doc()))
    fab.install_rule("s1", FlowRule(FlowMatch(dst_ip="10.0.2.1"),
                                    [RewriteDst("10.0.0.2", 3128), Forward("s2")], 5))
    fab.install_rule("s2", FlowRule(FlowMatch(dst_ip="10.0.0.2"), [Forward("s1")]))
    fab.install_rule("s1", FlowRule(FlowMatch(dst_ip="10.0.0.2"), [Forward("proxy")]))
    trace = fab.inject_packet("client", Packet(FlowKey("10.0.0.1", 5000, "10.0.2.1", 80)))
    assert trace.delivered_to == {"proxy"}
    assert trace.deliveries[0].packet.flow_key.dst_port == 3128


def test_forwarding_loop_is_cut():
    fab = Fabric(load_topology(line_doc()))
    m = FlowMatch(dst_port=9)
    fab.install_rule("s1", FlowRule(m, [Forward("s2")]))
    fab.install_rule("s2", FlowRule(m, [Duplicate("s3"), Forward("s1")]))
    fab.install_rule("s3", FlowRule(m, [Forward("s2")]))
    trace = fab.inject_packet("client", Packet(FlowKey("10.0.0.1", 5, "x", 9)))
    assert trace.delivered_to == frozenset()
    for branch in {h[0] for h in trace.hops}:
        visits = [(n, a.split(":")[0]) for b, n, a in trace.hops
                  if b == branch and a.startswith("r")]
        assert len(visits) == len(set(visits))
    assert any(a.startswith("drop:loop") for _, _, a in trace.hops)


def test_mtu_enforced():
    fab = Fabric(load_topology(tiny_doc()), mtu=10)
    with pytest.raises(ValueError, match="MTU"):
        fab.inject_packet("h1", Packet(FlowKey("h1", 1, "h2", 2), b"x" * 11))


# -- paths -----------------------------------------------------------------

def test_shortest_path_examples():
    fab = Fabric(load_topology(line_doc()))
    assert fab.shortest_path("s1", "s1") == ["s1"]
    assert fab.shortest_path("s1", "s3") == ["s1", "s2", "s3"]


def test_diamond_takes_cheaper_branch():
    doc = {"switches": ["a", "b", "c", "d"], "hosts": [],
           "links": [{"a": "a", "b": "b", "latency_ms": 1}, {"a": "b", "b": "d", "latency_ms": 5},
                     {"a": "a", "b": "c", "latency_ms": 2}, {"a": "c", "b": "d", "latency_ms": 1}]}
    fab = Fabric(load_topology(doc))
    cost, path = brute_shortest(nx_graph(doc), "a", "d")
    assert fab.shortest_path("a", "d") == path == ["a", "c", "d"]
    assert fab.distance("a", "d") == cost == 3


def test_equal_cost_tie_goes_to_smallest_sequence():
    doc = {"switches": ["a", "x", "b", "z"], "hosts": [],
           "links": [{"a": "a", "b": "x", "latency_ms": 1}, {"a": "x", "b": "z", "latency_ms": 1},
                     {"a": "a", "b": "b", "latency_ms": 1}, {"a": "b", "b": "z", "latency_ms": 1}]}
    assert Fabric(load_topology(doc)).shortest_path("a", "z") == ["a", "b", "z"]


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_shortest_path_matches_brute_force(seed):
    rng = random.Random(seed)
    doc = random_doc(rng)
    fab = Fabric(load_topology(doc))
    g = nx_graph(doc)
    nodes = sorted(g.nodes)
    for _ in range(4):
        a, b = rng.choice(nodes), rng.choice(nodes)
        cost, path = brute_shortest(g, a, b)
        assert fab.distance(a, b) == cost
        assert fab.shortest_path(a, b) == list(path)


# -- trace properties ------------------------------------------------------

def _route_all(fab):
    topo = fab.topology
    for sw in sorted(topo.switches):
        for h in sorted(topo.hosts):
            fab.install_rule(sw, FlowRule(FlowMatch(dst_ip=topo.ip_of(h)),
                                          [Forward(fab.shortest_path(sw, h)[1])]))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_latency_additivity_against_path_walk(seed):
    rng = random.Random(seed)
    doc = random_doc(rng, zero_latency=False)
    fab = Fabric(load_topology(doc))
    _route_all(fab)
    g = nx_graph(doc)
    hosts = [h["id"] for h in doc["hosts"]]
    a, b = rng.sample(hosts, 2)
    trace = fab.inject_packet(a, Packet(FlowKey(fab.topology.ip_of(a), 1,
                                                fab.topology.ip_of(b), 2)))
    walk = [n for br, n, _ in trace.hops if br == 0]
    walk = [n for i, n in enumerate(walk) if i == 0 or n != walk[i - 1]]
    assert walk[0] == a and walk[-1] == b
    assert Fraction(trace.latency_ms).limit_denominator(10**6) == sum(
        g[u][v]["w"] for u, v in zip(walk, walk[1:]))


@settings(max_examples=50, deadline=None)
@given(payload=st.binary(min_size=0, max_size=64))
def test_fork_conservation(payload):
    trace = _fork_fabric().inject_packet("origin", pkt(payload=payload))
    assert len(trace.deliveries) == 2
    assert trace.deliveries[0].packet.payload == trace.deliveries[1].packet.payload == payload


def test_traces_are_deterministic():
    def run():
        fab = _fork_fabric()
        return b"".join(fab.inject_packet("origin", pkt(payload=bytes([i]) * i, seq=i)).to_bytes()
                        for i in range(50))
    assert run() == run()
