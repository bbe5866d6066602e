from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path


@dataclass
class ControllerConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8000
    pending_ttl_s: float = 30.0
    heartbeat_interval_s: float = 5.0
    missed_heartbeats: int = 3
    caching_enabled: bool = True
    http_port: int = 80
    route_priority: int = 1
    nat_priority: int = 100
    fork_priority: int = 200

    def __post_init__(self):
        if self.pending_ttl_s <= 0 or self.heartbeat_interval_s <= 0:
            raise ValueError("TTL and heartbeat interval must be positive")
        if self.missed_heartbeats < 1:
            raise ValueError("missed_heartbeats must be >= 1")

    @property
    def session_timeout_s(self) -> float:
        return self.heartbeat_interval_s * self.missed_heartbeats

    @classmethod
    def from_dict(cls, data: dict) -> "ControllerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown controller config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ControllerConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)
