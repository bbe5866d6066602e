"""Run reports: per-request records, aggregates, JSON/CSV output."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

# fields that depend on the host machine, not on the scenario
WALL_CLOCK_FIELDS = ("processing_ms", "wall_clock_s")


@dataclass
class RequestRecord:
    index: int
    file_name: str
    client: str
    start_ms: float
    end_ms: Optional[float] = None
    latency_ms: Optional[float] = None       # simulated link latency only
    processing_ms: Optional[float] = None    # wall-clock time spent by this process
    served_by: Optional[str] = None          # "origin" | "cache"
    status: Optional[int] = None
    bytes: int = 0
    body_digest: Optional[str] = None
    ok: bool = False
    error: Optional[str] = None
    flow: Optional[str] = None


def _mean(values):
    # rounded so float summation noise does not leak into reports
    return round(sum(values) / len(values), 9) if values else None


def summarize(records, origin_requests: dict) -> dict:
    done = [r for r in records if r.ok]
    hits = [r for r in done if r.served_by == "cache"]
    misses = [r for r in done if r.served_by == "origin"]
    total = len(records)
    return {
        "requests": total,
        "succeeded": len(done),
        "hits": len(hits),
        "misses": len(misses),
        "hit_ratio": len(hits) / total if total else 0.0,
        "mean_hit_latency_ms": _mean([r.latency_ms for r in hits]),
        "mean_miss_latency_ms": _mean([r.latency_ms for r in misses]),
        "mean_hit_processing_ms": _mean([r.processing_ms for r in hits]),
        "mean_miss_processing_ms": _mean([r.processing_ms for r in misses]),
        "origin_requests": dict(origin_requests),
    }


@dataclass
class Report:
    scenario: str
    config: dict
    records: list
    manifest: dict
    aggregates: dict
    trace_digest: str
    injections: int
    wall_clock_s: float = 0.0
    schema_version: int = 1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["records"] = [asdict(r) for r in self.records]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Report":
        data = dict(data)
        data["records"] = [RequestRecord(**r) for r in data["records"]]
        return cls(**data)

    def reproducible_view(self) -> dict:
        """The report minus machine-dependent timing fields."""
        doc = self.to_dict()
        doc.pop("wall_clock_s")
        for rec in doc["records"]:
            rec.pop("processing_ms")
        for key in ("mean_hit_processing_ms", "mean_miss_processing_ms"):
            doc["aggregates"].pop(key)
        return doc

    def by_file(self) -> dict:
        out = {}
        for r in self.records:
            out.setdefault(r.file_name, []).append(r)
        return out


CSV_COLUMNS = [f.name for f in fields(RequestRecord)]


def emit_report(report: Report, out_dir, csv_output: bool = False) -> list[Path]:
    """Write ``report.json`` (and ``requests.csv``) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json"]
    paths[0].write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    if csv_output:
        path = out / "requests.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for rec in report.records:
                writer.writerow(asdict(rec))
        paths.append(path)
    return paths


def load_report(path) -> Report:
    return Report.from_dict(json.loads(Path(path).read_text()))
