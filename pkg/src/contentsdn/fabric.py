"""Deterministic simulated switch fabric.

A topology of switches and hosts joined by latency-weighted links, a flow
table per switch, and hop-by-hop forwarding with OpenFlow-style
match/action semantics (including packet duplication for flow forking).
"""
from __future__ import annotations

import bisect
import hashlib
import heapq
import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Union

DEFAULT_MTU = 1460
TCP_FLAGS = frozenset({"SYN", "ACK", "FIN", "RST"})


class FabricError(Exception):
    """Base class for fabric errors."""


class TopologyError(FabricError, ValueError):
    """Topology document could not be parsed or violates an invariant."""


class UnknownNodeError(FabricError, KeyError):
    pass


class InvalidRuleError(FabricError, ValueError):
    pass


class UnknownRuleError(FabricError, KeyError):
    pass


# --------------------------------------------------------------------------
# Topology
# --------------------------------------------------------------------------

def _as_latency(value) -> Fraction:
    # Latencies are kept exact so that path costs tie exactly when they should.
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise TopologyError(f"latency_ms must be a number, got {value!r}")
    if isinstance(value, float) and not math.isfinite(value):
        raise TopologyError(f"latency_ms must be finite, got {value!r}")
    try:
        lat = Fraction(str(value))
    except ValueError as exc:
        raise TopologyError(f"bad latency_ms {value!r}") from exc
    if lat < 0:
        raise TopologyError(f"link latency must be >= 0, got {value!r}")
    return lat


@dataclass(frozen=True)
class Topology:
    """Validated switch/host graph. Build it with :func:`load_topology`."""

    switches: frozenset
    hosts: Mapping[str, str]          # host-id -> attached switch-id
    links: Mapping[frozenset, Fraction]
    host_ips: Mapping[str, str] = field(default_factory=dict)

    @property
    def nodes(self) -> frozenset:
        return self.switches | frozenset(self.hosts)

    def neighbors(self, node: str) -> list[str]:
        return sorted(n for pair in self.links if node in pair
                      for n in pair if n != node)

    def latency(self, a: str, b: str) -> Fraction:
        return self.links[frozenset((a, b))]

    def ip_of(self, host: str) -> str:
        return self.host_ips.get(host, host)

    def to_document(self) -> dict:
        hosts = []
        for h in sorted(self.hosts):
            entry = {"id": h, "switch": self.hosts[h]}
            if h in self.host_ips:
                entry["ip"] = self.host_ips[h]
            hosts.append(entry)
        links = []
        for pair in sorted(self.links, key=sorted):
            a, b = sorted(pair)
            lat = self.links[pair]
            links.append({"a": a, "b": b,
                          "latency_ms": int(lat) if lat.denominator == 1 else float(lat)})
        return {"switches": sorted(self.switches), "hosts": hosts, "links": links}


def load_topology(document: Union[str, bytes, Mapping]) -> Topology:
    """Parse and validate a topology document.

    ``document`` is JSON text (or an already-decoded mapping) of the form
    ``{"switches": [...], "hosts": [{"id", "switch", ["ip"]}], "links":
    [{"a", "b", "latency_ms"}]}``.  Raises :class:`TopologyError` naming the
    first violated invariant.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise TopologyError(f"topology is not valid JSON: {exc}") from exc
    if not isinstance(document, Mapping):
        raise TopologyError("topology document must be a JSON object")
    for key in ("switches", "hosts", "links"):
        if not isinstance(document.get(key), list):
            raise TopologyError(f"topology document needs a '{key}' list")

    seen: set[str] = set()

    def node_id(value, what):
        if not isinstance(value, str) or not value:
            raise TopologyError(f"{what} id must be a non-empty string, got {value!r}")
        if value in seen:
            raise TopologyError(f"duplicate node id {value!r}")
        seen.add(value)
        return value

    switches = frozenset(node_id(s, "switch") for s in document["switches"])
    if not switches:
        raise TopologyError("topology needs at least one switch")

    hosts: dict[str, str] = {}
    host_ips: dict[str, str] = {}
    for entry in document["hosts"]:
        if not isinstance(entry, Mapping):
            raise TopologyError(f"host entry must be an object, got {entry!r}")
        hid = node_id(entry.get("id"), "host")
        sw = entry.get("switch")
        if sw not in switches:
            raise TopologyError(f"host {hid!r} attaches to unknown switch {sw!r}")
        hosts[hid] = sw
        if "ip" in entry:
            ip = entry["ip"]
            if not isinstance(ip, str) or not ip:
                raise TopologyError(f"host {hid!r} has an invalid ip {ip!r}")
            host_ips[hid] = ip
    ips = [host_ips.get(h, h) for h in hosts]
    if len(set(ips)) != len(ips):
        raise TopologyError("host addresses must be unique")

    links: dict[frozenset, Fraction] = {}
    for entry in document["links"]:
        if not isinstance(entry, Mapping):
            raise TopologyError(f"link entry must be an object, got {entry!r}")
        a, b = entry.get("a"), entry.get("b")
        for end in (a, b):
            if end not in seen:
                raise TopologyError(f"link endpoint {end!r} is not a known node")
        if a == b:
            raise TopologyError(f"self-loop on {a!r}")
        pair = frozenset((a, b))
        if pair in links:
            raise TopologyError(f"more than one link between {a!r} and {b!r}")
        if a in hosts and b in hosts:
            raise TopologyError(f"host-to-host link {a!r}-{b!r}")
        links[pair] = _as_latency(entry.get("latency_ms"))

    for hid, sw in hosts.items():
        attached = [p for p in links if hid in p]
        if len(attached) != 1 or frozenset((hid, sw)) not in links:
            raise TopologyError(
                f"host {hid!r} must have exactly one link, to its switch {sw!r}")

    topo = Topology(switches=switches, hosts=hosts, links=links, host_ips=host_ips)
    # connectivity
    start = min(seen)
    reached = {start}
    todo = [start]
    while todo:
        for n in topo.neighbors(todo.pop()):
            if n not in reached:
                reached.add(n)
                todo.append(n)
    if reached != seen:
        missing = sorted(seen - reached)
        raise TopologyError(f"topology is disconnected; unreachable: {missing}")
    return topo


# --------------------------------------------------------------------------
# Flows, rules and packets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowKey:
    """One direction of a TCP flow."""

    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int

    def __post_init__(self):
        for port in (self.src_port, self.dst_port):
            if not isinstance(port, int) or not 1 <= port <= 65535:
                raise ValueError(f"port out of range 1..65535: {port!r}")

    def reversed(self) -> "FlowKey":
        return FlowKey(self.dst_ip, self.dst_port, self.src_ip, self.src_port)

    def __str__(self):
        return f"{self.src_ip}:{self.src_port}->{self.dst_ip}:{self.dst_port}"


_MATCH_FIELDS = ("src_ip", "dst_ip", "src_port", "dst_port", "protocol")


@dataclass(frozen=True)
class FlowMatch:
    """Match on a subset of the IP/TCP 5-tuple; ``None`` is a wildcard."""

    src_ip: Optional[str] = None
    dst_ip: Optional[str] = None
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    protocol: Optional[str] = None

    def __post_init__(self):
        if all(getattr(self, f) is None for f in _MATCH_FIELDS):
            raise InvalidRuleError("a fully wildcarded match is not allowed")

    def matches(self, packet: "Packet") -> bool:
        key = packet.flow_key
        return ((self.src_ip is None or self.src_ip == key.src_ip)
                and (self.dst_ip is None or self.dst_ip == key.dst_ip)
                and (self.src_port is None or self.src_port == key.src_port)
                and (self.dst_port is None or self.dst_port == key.dst_port)
                and (self.protocol is None or self.protocol == packet.protocol))

    def __str__(self):
        return ",".join(f"{f}={getattr(self, f)}" for f in _MATCH_FIELDS
                        if getattr(self, f) is not None)


@dataclass(frozen=True)
class Forward:
    next_hop: str

    def __str__(self):
        return f"forward({self.next_hop})"


@dataclass(frozen=True)
class Duplicate:
    next_hop: str

    def __str__(self):
        return f"duplicate({self.next_hop})"


@dataclass(frozen=True)
class RewriteDst:
    ip: str
    port: int

    def __str__(self):
        return f"rewrite-dst({self.ip}:{self.port})"


@dataclass(frozen=True)
class Drop:
    def __str__(self):
        return "drop"


Action = Union[Forward, Duplicate, RewriteDst, Drop]


@dataclass(frozen=True)
class FlowRule:
    match: FlowMatch
    actions: tuple
    priority: int = 0
    rule_id: Optional[str] = None
    cookie: Optional[str] = None     # free-form owner tag, e.g. "nat" or "fork:a.bin"

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        validate_rule(self)


def validate_rule(rule: FlowRule) -> None:
    if not isinstance(rule.match, FlowMatch):
        raise InvalidRuleError("rule.match must be a FlowMatch")
    if not isinstance(rule.priority, int) or isinstance(rule.priority, bool) or rule.priority < 0:
        raise InvalidRuleError(f"priority must be a non-negative integer, got {rule.priority!r}")
    if not rule.actions:
        raise InvalidRuleError("action list is empty")
    for act in rule.actions:
        if not isinstance(act, (Forward, Duplicate, RewriteDst, Drop)):
            raise InvalidRuleError(f"unknown action {act!r}")
    terminals = [a for a in rule.actions if isinstance(a, (Forward, Drop))]
    if len(terminals) != 1:
        raise InvalidRuleError("a rule needs exactly one forward or drop action")
    if any(isinstance(a, Duplicate) for a in rule.actions) and not isinstance(terminals[0], Forward):
        raise InvalidRuleError("duplicate requires a primary forward action")


@dataclass(frozen=True)
class Packet:
    flow_key: FlowKey
    payload: bytes = b""
    flags: frozenset = frozenset()
    seq: int = 0
    protocol: str = "tcp"
    forked: bool = False

    def __post_init__(self):
        object.__setattr__(self, "flags", frozenset(self.flags))
        if not self.flags <= TCP_FLAGS:
            raise ValueError(f"unknown tcp flags {sorted(self.flags - TCP_FLAGS)}")
        if not isinstance(self.seq, int) or self.seq < 0:
            raise ValueError(f"seq must be an unsigned integer, got {self.seq!r}")


@dataclass(frozen=True)
class Delivery:
    host: str
    packet: Packet
    latency_ms: float
    branch: int


@dataclass
class DeliveryTrace:
    """What happened to one injected packet and all of its copies."""

    hops: list = field(default_factory=list)        # (branch, node, action)
    latency_ms: float = 0.0                         # along the primary path
    delivered_to: frozenset = frozenset()
    deliveries: list = field(default_factory=list)

    def to_bytes(self) -> bytes:
        doc = {
            "hops": [list(h) for h in self.hops],
            "latency_ms": repr(self.latency_ms),
            "delivered_to": sorted(self.delivered_to),
            "deliveries": [
                [d.host, d.branch, repr(d.latency_ms), str(d.packet.flow_key),
                 d.packet.seq, sorted(d.packet.flags), d.packet.forked,
                 hashlib.blake2b(d.packet.payload, digest_size=8).hexdigest()]
                for d in self.deliveries
            ],
        }
        return json.dumps(doc, separators=(",", ":")).encode()


# --------------------------------------------------------------------------
# Fabric
# --------------------------------------------------------------------------

class Fabric:
    """Flow tables plus a hop-by-hop forwarding engine over a Topology.

    Not thread-safe: callers serialize access.
    """

    def __init__(self, topology: Topology, mtu: int = DEFAULT_MTU):
        self.topology = topology
        self.mtu = mtu
        self._tables: dict[str, list] = {s: [] for s in topology.switches}
        self._rule_switch: dict[str, str] = {}
        self._ids = itertools.count(1)
        self._order = itertools.count()
        self._ip_to_host = {topology.ip_of(h): h for h in topology.hosts}
        self._path_cache: dict = {}

    # -- nodes ------------------------------------------------------------

    def host_by_ip(self, ip: str) -> Optional[str]:
        return self._ip_to_host.get(ip)

    def _require_switch(self, switch_id):
        if switch_id not in self._tables:
            raise UnknownNodeError(f"unknown switch {switch_id!r}")

    def _require_node(self, node):
        if node not in self.topology.switches and node not in self.topology.hosts:
            raise UnknownNodeError(f"unknown node {node!r}")

    # -- flow tables ------------------------------------------------------

    def install_rule(self, switch_id: str, rule: FlowRule) -> str:
        self._require_switch(switch_id)
        validate_rule(rule)
        neighbors = set(self.topology.neighbors(switch_id))
        for act in rule.actions:
            if isinstance(act, (Forward, Duplicate)) and act.next_hop not in neighbors:
                raise InvalidRuleError(
                    f"{act} on {switch_id!r}: {act.next_hop!r} is not a neighbor")
        if rule.rule_id is None:
            rule = replace(rule, rule_id=f"r{next(self._ids)}")
        elif rule.rule_id in self._rule_switch:
            raise InvalidRuleError(f"duplicate rule id {rule.rule_id!r}")
        entry = (-rule.priority, next(self._order), rule)
        bisect.insort(self._tables[switch_id], entry, key=lambda e: e[:2])
        self._rule_switch[rule.rule_id] = switch_id
        return rule.rule_id

    def remove_rule(self, switch_id: str, rule_id: str) -> None:
        self._require_switch(switch_id)
        if self._rule_switch.get(rule_id) != switch_id:
            raise UnknownRuleError(f"no rule {rule_id!r} on {switch_id!r}")
        table = self._tables[switch_id]
        table[:] = [e for e in table if e[2].rule_id != rule_id]
        del self._rule_switch[rule_id]

    def rules(self, switch_id: str) -> list[FlowRule]:
        """Rules on a switch in lookup order."""
        self._require_switch(switch_id)
        return [e[2] for e in self._tables[switch_id]]

    def match_rule(self, switch_id: str, packet: Packet) -> Optional[FlowRule]:
        self._require_switch(switch_id)
        for _, _, rule in self._tables[switch_id]:
            if rule.match.matches(packet):
                return rule
        return None

    # -- forwarding -------------------------------------------------------

    def inject_packet(self, from_host: str, packet: Packet) -> DeliveryTrace:
        """Walk ``packet`` from ``from_host`` through the flow tables."""
        topo = self.topology
        if from_host not in topo.hosts:
            raise UnknownNodeError(f"unknown host {from_host!r}")
        if len(packet.payload) > self.mtu:
            raise ValueError(f"payload {len(packet.payload)} B exceeds MTU {self.mtu} B")

        trace = DeliveryTrace()
        delivered = set()
        branches = itertools.count(1)
        ingress = topo.hosts[from_host]
        trace.hops.append((0, from_host, "send"))
        # (branch, packet, node, latency, visited)
        pending = deque([(0, packet, ingress, topo.latency(from_host, ingress), frozenset())])

        while pending:
            branch, pkt, node, latency, visited = pending.popleft()
            while True:
                if node in topo.hosts:
                    trace.hops.append((branch, node, "deliver"))
                    delivered.add(node)
                    trace.deliveries.append(Delivery(node, pkt, float(latency), branch))
                    if branch == 0:
                        trace.latency_ms = float(latency)
                    break
                rule = self.match_rule(node, pkt)
                if rule is None:
                    trace.hops.append((branch, node, "drop:no-match"))
                    if branch == 0:
                        trace.latency_ms = float(latency)
                    break
                if (node, rule.rule_id) in visited:
                    trace.hops.append((branch, node, f"drop:loop({rule.rule_id})"))
                    if branch == 0:
                        trace.latency_ms = float(latency)
                    break
                visited = visited | {(node, rule.rule_id)}
                trace.hops.append(
                    (branch, node, f"{rule.rule_id}:" + ",".join(map(str, rule.actions))))
                next_hop = None
                for act in rule.actions:
                    if isinstance(act, RewriteDst):
                        key = pkt.flow_key
                        pkt = replace(pkt, flow_key=FlowKey(key.src_ip, key.src_port,
                                                            act.ip, act.port))
                    elif isinstance(act, Duplicate):
                        copy = replace(pkt, forked=True)
                        pending.append((next(branches), copy, act.next_hop,
                                        latency + topo.latency(node, act.next_hop), visited))
                    elif isinstance(act, Forward):
                        next_hop = act.next_hop
                if next_hop is None:       # drop action
                    if branch == 0:
                        trace.latency_ms = float(latency)
                    break
                latency += topo.latency(node, next_hop)
                node = next_hop

        trace.delivered_to = frozenset(delivered)
        return trace

    # -- paths ------------------------------------------------------------

    def shortest_path(self, a: str, b: str) -> list[str]:
        """Minimum-latency path; ties go to the lexicographically smallest node sequence."""
        self._require_node(a)
        self._require_node(b)
        return list(self._shortest(a, b)[1])

    def distance(self, a: str, b: str) -> Fraction:
        self._require_node(a)
        self._require_node(b)
        return self._shortest(a, b)[0]

    def _shortest(self, a, b):
        key = (a, b)
        if key not in self._path_cache:
            self._path_cache.update(
                {(a, dst): v for dst, v in shortest_paths_from(self.topology, a).items()})
        return self._path_cache[key]

    def path_latency(self, path: Iterable[str]) -> Fraction:
        path = list(path)
        return sum((self.topology.latency(u, v) for u, v in zip(path, path[1:])), Fraction(0))


def shortest_paths_from(topology: Topology, source: str) -> dict:
    """Map every node to ``(latency, path)`` from ``source``.

    Dijkstra keyed on ``(cost, path-tuple)``; a node is settled the first time
    it is popped, which yields the cheapest path and, among equally cheap
    simple paths, the lexicographically smallest one. Hosts never relay.
    """
    settled: dict = {}
    heap = [(Fraction(0), (source,))]
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in settled:
            continue
        settled[node] = (cost, path)
        if node in topology.hosts and node != source:
            continue
        for n in topology.neighbors(node):
            if n not in settled:
                heapq.heappush(heap, (cost + topology.latency(node, n), path + (n,)))
    return settled
