"""Content-management control plane.

Keeps the two content dictionaries (file name -> cache, origin IP -> pending
file name), the storage-element sessions, and pushes routing, NAT and
flow-fork rules into the fabric.
"""
from __future__ import annotations

import itertools
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..fabric import Duplicate, Fabric, FlowMatch, FlowRule, Forward
from .config import ControllerConfig

log = logging.getLogger(__name__)

STORAGE_OPS = frozenset({"store", "serve"})


class ControllerError(Exception):
    status = 400


class InvalidRequest(ControllerError):
    status = 400


class NotFound(ControllerError):
    status = 404


class Conflict(ControllerError):
    status = 409


def _check_port(port, what):
    if not isinstance(port, int) or isinstance(port, bool) or not 1 <= port <= 65535:
        raise InvalidRequest(f"{what} must be in 1..65535, got {port!r}")


def _check_ip(ip, what):
    if not isinstance(ip, str) or not ip:
        raise InvalidRequest(f"{what} must be a non-empty string, got {ip!r}")


@dataclass(frozen=True)
class ContentMetadata:
    """File name plus the TCP flow it travels on (proxy-side view)."""

    file_name: str
    dst_ip: str
    dst_port: int
    src_ip: str
    src_port: int

    def __post_init__(self):
        if not isinstance(self.file_name, str) or not self.file_name:
            raise InvalidRequest("file_name must be non-empty")
        _check_ip(self.dst_ip, "dst_ip")
        _check_ip(self.src_ip, "src_ip")
        _check_port(self.dst_port, "dst_port")
        _check_port(self.src_port, "src_port")


@dataclass(frozen=True)
class StorageCapability:
    ip: str
    port: int
    capacity_bytes: int
    ops: frozenset = STORAGE_OPS

    def __post_init__(self):
        object.__setattr__(self, "ops", frozenset(self.ops))
        _check_ip(self.ip, "ip")
        _check_port(self.port, "port")
        if (not isinstance(self.capacity_bytes, int) or isinstance(self.capacity_bytes, bool)
                or self.capacity_bytes <= 0):
            raise InvalidRequest(f"capacity_bytes must be > 0, got {self.capacity_bytes!r}")
        if not self.ops or not self.ops <= STORAGE_OPS:
            raise InvalidRequest(f"ops must be a non-empty subset of {sorted(STORAGE_OPS)}")


@dataclass
class StorageSession:
    session_id: str
    capability: StorageCapability
    last_heartbeat: float
    used_bytes: int = 0
    object_count: int = 0
    stats_at: Optional[float] = None
    state: str = "active"      # active -> expired | closed

    def to_dict(self) -> dict:
        cap = self.capability
        return {"session_id": self.session_id, "ip": cap.ip, "port": cap.port,
                "capacity_bytes": cap.capacity_bytes, "ops": sorted(cap.ops),
                "last_heartbeat": self.last_heartbeat, "used_bytes": self.used_bytes,
                "object_count": self.object_count, "stats_at": self.stats_at,
                "state": self.state}


@dataclass
class _CacheRecord:
    session_id: str
    ip: str
    port: int
    authoritative: bool
    created_at: float
    origin_ip: str
    rules: list = field(default_factory=list)     # (switch, rule-id) of the fork


@dataclass
class _Pending:
    file_name: str
    inserted_at: float


class Controller:
    """All state lives here; every public method runs under one lock."""

    def __init__(self, fabric: Fabric, proxy_host: str, config: ControllerConfig = None,
                 clock: Callable[[], float] = time.monotonic,
                 policy: Callable[[ContentMetadata], bool] = None,
                 notify: Callable[[StorageSession, ContentMetadata], None] = None):
        self.fabric = fabric
        self.config = config or ControllerConfig()
        if proxy_host not in fabric.topology.hosts:
            raise ValueError(f"proxy host {proxy_host!r} not in topology")
        self.proxy_host = proxy_host
        self.clock = clock
        self.policy = policy or (lambda meta: True)
        self.notify = notify
        self._lock = threading.RLock()
        self._ids = itertools.count(1)
        self.sessions: dict[str, StorageSession] = {}
        self.cache_dictionary: dict[str, _CacheRecord] = {}
        self.request_dictionary: dict[str, _Pending] = {}

    # ------------------------------------------------------------------
    # static rules
    # ------------------------------------------------------------------

    def install_routing(self) -> list[str]:
        """Destination-based shortest-path forwarding for every host."""
        topo = self.fabric.topology
        ids = []
        with self._lock:
            for sw in sorted(topo.switches):
                for host in sorted(topo.hosts):
                    nxt = self.fabric.shortest_path(sw, host)[1]
                    rule = FlowRule(FlowMatch(dst_ip=topo.ip_of(host)), [Forward(nxt)],
                                    priority=self.config.route_priority, cookie="route")
                    ids.append(self.fabric.install_rule(sw, rule))
        return ids

    def install_nat_rules(self, client_switch: str, proxy_host: str = None,
                          clients=None) -> list[str]:
        """Steer clients' port-80 traffic to the proxy and back.

        ``clients`` defaults to every host on ``client_switch`` except the proxy.
        """
        topo = self.fabric.topology
        proxy_host = proxy_host or self.proxy_host
        if client_switch not in topo.switches:
            raise NotFound(f"unknown switch {client_switch!r}")
        if proxy_host not in topo.hosts:
            raise NotFound(f"unknown host {proxy_host!r}")
        if topo.hosts[proxy_host] != client_switch:
            raise InvalidRequest(f"proxy {proxy_host!r} is not attached to {client_switch!r}")
        if clients is None:
            clients = [h for h, sw in topo.hosts.items()
                       if sw == client_switch and h != proxy_host]
        port = self.config.http_port
        ids = []
        with self._lock:
            for client in sorted(clients):
                cip = topo.ip_of(client)
                ids.append(self.fabric.install_rule(client_switch, FlowRule(
                    FlowMatch(src_ip=cip, dst_port=port, protocol="tcp"),
                    [Forward(proxy_host)], priority=self.config.nat_priority, cookie="nat")))
                ids.append(self.fabric.install_rule(client_switch, FlowRule(
                    FlowMatch(dst_ip=cip, src_port=port, protocol="tcp"),
                    [Forward(client)], priority=self.config.nat_priority, cookie="nat")))
        return ids

    # ------------------------------------------------------------------
    # storage sessions
    # ------------------------------------------------------------------

    def register_storage(self, capability: StorageCapability) -> str:
        if self.fabric.host_by_ip(capability.ip) is None:
            raise NotFound(f"storage element {capability.ip!r} is not in the topology")
        with self._lock:
            now = self.clock()
            self._expire(now)
            for sess in list(self.sessions.values()):
                cap = sess.capability
                if sess.state == "active" and (cap.ip, cap.port) == (capability.ip, capability.port):
                    self._end_session(sess, "closed")
            sid = f"sess-{next(self._ids)}"
            self.sessions[sid] = StorageSession(sid, capability, last_heartbeat=now)
            log.info("registered storage %s at %s:%d", sid, capability.ip, capability.port)
            return sid

    def heartbeat(self, session_id: str) -> None:
        with self._lock:
            now = self.clock()
            self._expire(now)
            self._active(session_id).last_heartbeat = now

    def report_stats(self, session_id: str, used_bytes: int, object_count: int,
                     evicted=()) -> None:
        """Record usage; ``evicted`` names files the element dropped since its last report."""
        with self._lock:
            now = self.clock()
            self._expire(now)
            sess = self._active(session_id)
            for name, value in (("used_bytes", used_bytes), ("object_count", object_count)):
                if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                    raise InvalidRequest(f"{name} must be a non-negative integer")
            if used_bytes > sess.capability.capacity_bytes:
                raise InvalidRequest(
                    f"used_bytes {used_bytes} exceeds capacity {sess.capability.capacity_bytes}")
            if isinstance(evicted, (str, bytes)) or not all(
                    isinstance(n, str) for n in evicted):
                raise InvalidRequest("evicted must be a list of file names")
            sess.used_bytes = used_bytes
            sess.object_count = object_count
            sess.stats_at = now
            for name in evicted:
                rec = self.cache_dictionary.get(name)
                if rec is not None and rec.session_id == session_id and rec.authoritative:
                    self._drop_record(name)

    def deregister_storage(self, session_id: str) -> None:
        with self._lock:
            self._expire(self.clock())
            self._end_session(self._active(session_id), "closed")

    def session(self, session_id: str) -> StorageSession:
        with self._lock:
            self._expire(self.clock())
            try:
                return self.sessions[session_id]
            except KeyError:
                raise NotFound(f"unknown session {session_id!r}") from None

    def _active(self, session_id) -> StorageSession:
        sess = self.sessions.get(session_id)
        if sess is None:
            raise NotFound(f"unknown session {session_id!r}")
        if sess.state != "active":
            raise Conflict(f"session {session_id!r} is {sess.state}")
        return sess

    def _live(self, sess: StorageSession, now: float) -> bool:
        return (sess.state == "active"
                and now - sess.last_heartbeat <= self.config.session_timeout_s)

    def _end_session(self, sess: StorageSession, state: str) -> None:
        sess.state = state
        for name, rec in list(self.cache_dictionary.items()):
            if rec.session_id == sess.session_id:
                self._drop_record(name)
        log.info("storage session %s %s", sess.session_id, state)

    def _drop_record(self, name: str) -> None:
        rec = self.cache_dictionary.pop(name)
        self._remove_fork(rec)
        pending = self.request_dictionary.get(rec.origin_ip)
        if pending is not None and pending.file_name == name:
            del self.request_dictionary[rec.origin_ip]

    def _remove_fork(self, rec: _CacheRecord) -> None:
        for switch, rule_id in rec.rules:
            try:
                self.fabric.remove_rule(switch, rule_id)
            except KeyError:
                pass
        rec.rules = []

    def _expire(self, now: float) -> None:
        for sess in list(self.sessions.values()):
            if sess.state == "active" and not self._live(sess, now):
                self._end_session(sess, "expired")
        ttl = self.config.pending_ttl_s
        for origin, pending in list(self.request_dictionary.items()):
            if now - pending.inserted_at > ttl:
                del self.request_dictionary[origin]
        for name, rec in list(self.cache_dictionary.items()):
            if not rec.authoritative and now - rec.created_at > ttl:
                self._drop_record(name)

    def tick(self) -> None:
        """Apply time-based expiry now."""
        with self._lock:
            self._expire(self.clock())

    # ------------------------------------------------------------------
    # content
    # ------------------------------------------------------------------

    def lookup_content(self, file_name: str) -> Optional[tuple[str, int]]:
        with self._lock:
            rec = self.cache_dictionary.get(file_name)
            if rec is None or not rec.authoritative:
                return None
            sess = self.sessions.get(rec.session_id)
            if sess is None or not self._live(sess, self.clock()):
                return None
            return rec.ip, rec.port

    def cache_query(self, source_ip: str) -> Optional[str]:
        """Claim the pending file name for a response stream from ``source_ip``."""
        with self._lock:
            self._expire(self.clock())
            pending = self.request_dictionary.pop(source_ip, None)
            return pending.file_name if pending else None

    def confirm_stored(self, session_id: str, file_name: str) -> None:
        with self._lock:
            self._expire(self.clock())
            self._active(session_id)
            rec = self.cache_dictionary.get(file_name)
            if rec is None or rec.authoritative:
                raise NotFound(f"no provisional entry for {file_name!r}")
            if rec.session_id != session_id:
                raise Conflict(f"{file_name!r} was assigned to another session")
            rec.authoritative = True
            self._remove_fork(rec)
            pending = self.request_dictionary.get(rec.origin_ip)
            if pending is not None and pending.file_name == file_name:
                del self.request_dictionary[rec.origin_ip]

    def report_metadata(self, meta: ContentMetadata) -> Optional[str]:
        """Record a cache miss and set up the flow fork toward a cache.

        Returns the chosen storage session id, or ``None`` when nothing was
        installed (already cached, origin busy, policy declined, no cache).
        """
        with self._lock:
            now = self.clock()
            self._expire(now)
            if not (self.config.caching_enabled and self.policy(meta)):
                return None
            if meta.file_name in self.cache_dictionary:
                return None
            if meta.dst_ip in self.request_dictionary:
                log.info("origin %s already has a pending fetch; %r not cached",
                         meta.dst_ip, meta.file_name)
                return None
            fabric = self.fabric
            origin = fabric.host_by_ip(meta.dst_ip)
            proxy = fabric.host_by_ip(meta.src_ip) or self.proxy_host
            if origin is None:
                return None
            sess = self._choose_cache(origin, proxy, now)
            if sess is None:
                return None
            cache_host = fabric.host_by_ip(sess.capability.ip)
            rules = self._install_fork(meta, origin, proxy, cache_host)
            self.request_dictionary[meta.dst_ip] = _Pending(meta.file_name, now)
            self.cache_dictionary[meta.file_name] = _CacheRecord(
                sess.session_id, sess.capability.ip, sess.capability.port,
                authoritative=False, created_at=now, origin_ip=meta.dst_ip, rules=rules)
        if self.notify is not None:
            self.notify(sess, meta)
        return sess.session_id

    def compute_fork_point(self, origin: str, proxy: str, cache: str) -> str:
        """Switch on the origin->proxy path closest to the cache.

        Ties go to the switch earliest on the path.
        """
        with self._lock:
            path = self.fabric.shortest_path(origin, proxy)
            switches = [n for n in path if n in self.fabric.topology.switches]
            return min(switches, key=lambda s: (self.fabric.distance(s, cache),
                                                switches.index(s)))

    def _choose_cache(self, origin, proxy, now) -> Optional[StorageSession]:
        candidates = []
        for sess in self.sessions.values():
            cap = sess.capability
            if not self._live(sess, now) or "store" not in cap.ops:
                continue
            if sess.used_bytes >= cap.capacity_bytes:
                continue
            host = self.fabric.host_by_ip(cap.ip)
            if host in (origin, proxy):
                continue
            fork = self.compute_fork_point(origin, proxy, host)
            candidates.append((self.fabric.distance(fork, host), cap.ip, sess.session_id))
        if not candidates:
            return None
        return self.sessions[min(candidates)[2]]

    def _install_fork(self, meta, origin, proxy, cache_host) -> list:
        fabric = self.fabric
        switches = fabric.topology.switches
        primary = fabric.shortest_path(origin, proxy)
        fork = self.compute_fork_point(origin, proxy, cache_host)
        copy_path = fabric.shortest_path(fork, cache_host)
        # With zero-latency links the copy path may re-touch the primary path;
        # fork at the last shared switch so copies and originals never share a hop.
        on_primary = set(primary)
        split = max(i for i, n in enumerate(copy_path) if n in on_primary)
        fork = copy_path[split]
        copy_tail = copy_path[split:]

        match = FlowMatch(src_ip=meta.dst_ip, src_port=meta.dst_port,
                          dst_ip=meta.src_ip, dst_port=meta.src_port, protocol="tcp")
        prio = self.config.fork_priority
        cookie = f"fork:{meta.file_name}"
        installed = []
        for i, node in enumerate(primary):
            if node not in switches:
                continue
            actions = [Forward(primary[i + 1])]
            if node == fork:
                actions.insert(0, Duplicate(copy_tail[1]))
            rid = fabric.install_rule(node, FlowRule(match, actions, priority=prio, cookie=cookie))
            installed.append((node, rid))
        for i, node in enumerate(copy_tail[1:-1], start=1):
            rid = fabric.install_rule(node, FlowRule(match, [Forward(copy_tail[i + 1])],
                                                     priority=prio, cookie=cookie))
            installed.append((node, rid))
        log.info("fork for %r at %s toward %s", meta.file_name, fork, cache_host)
        return installed

    # ------------------------------------------------------------------

    def state(self) -> dict:
        with self._lock:
            self._expire(self.clock())
            return {
                "cache_dictionary": {
                    name: {"ip": r.ip, "port": r.port, "session_id": r.session_id,
                           "authoritative": r.authoritative}
                    for name, r in sorted(self.cache_dictionary.items())},
                "request_dictionary": {
                    origin: {"file_name": p.file_name, "inserted_at": p.inserted_at}
                    for origin, p in sorted(self.request_dictionary.items())},
                "sessions": {sid: s.to_dict() for sid, s in sorted(self.sessions.items())},
            }
