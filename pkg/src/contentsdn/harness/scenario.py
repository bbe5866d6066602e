"""Scenario files: topology, file manifest, request script, config overrides."""
from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..fabric import Topology, TopologyError, load_topology


class ScenarioError(ValueError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


CONFIG_DEFAULTS = {
    "controller": {},
    "cache_capacity_bytes": 64 * 1024 * 1024,
    "cache_port": 8080,
    "http_port": 80,
    "mtu": 1460,
    "index_name": "index.html",
    "controller_down": False,
    "reorder_seed": None,
    "duplicate_rate": 0.0,
}


@dataclass(frozen=True)
class FileSpec:
    name: str
    size: int
    seed: int
    origin: Optional[str] = None


@dataclass(frozen=True)
class RequestSpec:
    at_ms: float
    client: str
    file: str


@dataclass
class Scenario:
    name: str
    topology: Topology
    files: list
    requests: list
    proxy: str = "proxy"
    caches: list = field(default_factory=lambda: ["cache"])
    origins: list = field(default_factory=lambda: ["origin"])
    client_switch: Optional[str] = None
    config: dict = field(default_factory=dict)

    def file(self, name: str) -> FileSpec:
        for f in self.files:
            if f.name == name:
                return f
        raise KeyError(name)

    def origin_of(self, spec: FileSpec) -> str:
        return spec.origin or self.origins[0]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "topology": self.topology.to_document(),
            "roles": {"proxy": self.proxy, "caches": list(self.caches),
                      "origins": list(self.origins), "client_switch": self.client_switch},
            "files": [{k: v for k, v in vars(f).items() if v is not None} for f in self.files],
            "requests": [vars(r) for r in self.requests],
            "config": dict(self.config),
        }


def _fail(msg):
    raise ScenarioError(f"invalid scenario: {msg}")


def load_scenario(source: Union[str, Path, dict]) -> Scenario:
    """Load and validate a scenario from a JSON file path or a decoded dict."""
    base = Path(".")
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            _fail(f"{path} is not valid JSON: {exc}")
        base = path.parent
    else:
        doc = source
    if not isinstance(doc, dict):
        _fail("document must be a JSON object")

    if "topology" in doc:
        topo_doc = doc["topology"]
    elif "topology_file" in doc:
        try:
            topo_doc = (base / doc["topology_file"]).read_text()
        except OSError as exc:
            _fail(f"cannot read topology_file: {exc}")
    else:
        _fail("needs 'topology' or 'topology_file'")
    try:
        topology = load_topology(topo_doc)
    except TopologyError as exc:
        _fail(str(exc))

    roles = doc.get("roles", {})
    unknown = set(roles) - {"proxy", "caches", "origins", "client_switch"}
    if unknown:
        _fail(f"unknown roles {sorted(unknown)}")
    proxy = roles.get("proxy", "proxy")
    caches = list(roles.get("caches", ["cache"]))
    origins = list(roles.get("origins", ["origin"]))
    for host in [proxy, *caches, *origins]:
        if host not in topology.hosts:
            _fail(f"role host {host!r} is not in the topology")
    client_switch = roles.get("client_switch") or topology.hosts[proxy]

    config = dict(CONFIG_DEFAULTS)
    overrides = doc.get("config", {})
    unknown = set(overrides) - set(CONFIG_DEFAULTS)
    if unknown:
        _fail(f"unknown config keys {sorted(unknown)}")
    config.update(overrides)
    seed = config["reorder_seed"]
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
        _fail("reorder_seed must be an integer or null")
    rate = config["duplicate_rate"]
    if not isinstance(rate, (int, float)) or not 0 <= rate <= 1:
        _fail("duplicate_rate must be within [0, 1]")

    files = []
    for entry in doc.get("files", []):
        try:
            spec = FileSpec(entry["name"], entry["size"], entry.get("seed", 0), entry.get("origin"))
        except (KeyError, TypeError):
            _fail(f"bad file entry {entry!r}")
        if not isinstance(spec.name, str) or not spec.name:
            _fail(f"file name must be a non-empty string: {entry!r}")
        if not isinstance(spec.size, int) or spec.size <= 0:
            _fail(f"file {spec.name!r} must have size > 0")
        if spec.origin is not None and spec.origin not in origins:
            _fail(f"file {spec.name!r} names unknown origin {spec.origin!r}")
        files.append(spec)
    names = [f.name for f in files]
    if len(set(names)) != len(names):
        _fail("duplicate file names in manifest")
    if not files:
        _fail("manifest is empty")

    requests = []
    for entry in doc.get("requests", []):
        try:
            req = RequestSpec(float(entry["at_ms"]), entry["client"], entry["file"])
        except (KeyError, TypeError, ValueError):
            _fail(f"bad request entry {entry!r}")
        if req.file not in names:
            _fail(f"request for {req.file!r} which is not in the manifest")
        if req.client not in topology.hosts or req.client in [proxy, *caches, *origins]:
            _fail(f"request client {req.client!r} is not a client host")
        if topology.hosts[req.client] != client_switch:
            _fail(f"client {req.client!r} is not on the client switch {client_switch!r}")
        if req.at_ms < 0:
            _fail("request offsets must be >= 0")
        requests.append(req)
    if not requests:
        _fail("request script is empty")

    return Scenario(doc.get("name", "scenario"), topology, files, requests, proxy, caches,
                    origins, client_switch, config)


def default_scenario() -> Scenario:
    """The shipped scenario: 3-switch line, 12 files 2 KiB..6 MiB, each fetched twice."""
    data = resources.files("contentsdn.harness") / "data" / "default_scenario.json"
    with resources.as_file(data) as path:
        return load_scenario(path)


def default_manifest(count: int = 12, smallest: int = 2 * 1024,
                     largest: int = 6 * 1024 * 1024) -> list[FileSpec]:
    sizes = np.rint(np.geomspace(smallest, largest, count)).astype(int)
    return [FileSpec(f"file{i + 1:02d}.bin", int(s), i + 1) for i, s in enumerate(sizes)]


@dataclass(frozen=True)
class OriginFile:
    name: str
    body: bytes
    digest: str


def file_bytes(name: str, size: int, seed: int) -> bytes:
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    return rng.bytes(size)


def generate_files(files) -> dict[str, OriginFile]:
    """Deterministic pseudo-random content for every manifest entry."""
    out = {}
    for spec in files:
        if spec.size <= 0:
            raise ScenarioError(f"file {spec.name!r} must have size > 0")
        body = file_bytes(spec.name, spec.size, spec.seed)
        out[spec.name] = OriginFile(spec.name, body, hashlib.sha256(body).hexdigest())
    return out
