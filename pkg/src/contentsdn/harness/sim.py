"""Discrete-event run of the whole system over the simulated fabric.

Clients, proxy, cache and origin are endpoints attached to fabric hosts.
They exchange byte streams cut into MTU-sized segments; every segment is
injected into the fabric and delivered after the latency of the path it
took. The controller is the real one, reached over its HTTP API.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
import logging
import random
import tempfile
import time
import zlib
from dataclasses import dataclass
from typing import Optional

from ..cache.node import CacheNode
from ..cache.reassembly import SEQ_MOD, Reassembler, TcpSegment
from ..cache.store import ContentStore
from ..controller.api import ControllerServer
from ..controller.client import ControllerClient, ControllerRequestError
from ..controller.config import ControllerConfig
from ..controller.core import Controller
from ..fabric import Fabric, FlowKey, Packet
from ..httpmsg import HttpParseError, build_response, parse_response
from ..proxy.decision import NoProxy, Redirect, decide
from ..proxy.request import parse_get, upstream_head
from .report import Report, RequestRecord, summarize
from .scenario import Scenario, ScenarioError, generate_files

log = logging.getLogger(__name__)

EPHEMERAL_BASE = 40000


def to_segment(pkt: Packet) -> TcpSegment:
    return TcpSegment(pkt.flow_key, pkt.seq, pkt.payload,
                      fin="FIN" in pkt.flags, syn="SYN" in pkt.flags)


class Endpoint:
    """A host's TCP receive side: reassembles incoming flows."""

    def __init__(self, sim: "Simulation", host: str):
        self.sim = sim
        self.host = host
        self.ip = sim.topology.ip_of(host)
        self.rx = Reassembler(max_flow_bytes=1 << 40, flow_timeout_s=float("inf"),
                              require_syn=True)

    def on_packet(self, pkt: Packet) -> None:
        seg = to_segment(pkt)
        if self.rx.observe_segment(seg):
            self.on_stream(pkt.flow_key, self.rx.reassemble(pkt.flow_key))

    def on_stream(self, flow: FlowKey, data: bytes) -> None:
        raise NotImplementedError


class ClientEndpoint(Endpoint):
    def __init__(self, sim, host):
        super().__init__(sim, host)
        self.outstanding: dict[FlowKey, RequestRecord] = {}

    def request(self, record: RequestRecord, origin_ip: str) -> None:
        flow = FlowKey(self.ip, self.sim.ephemeral_port(), origin_ip, self.sim.http_port)
        record.flow = str(flow)
        self.outstanding[flow.reversed()] = record
        head = (f"GET /{record.file_name} HTTP/1.1\r\nHost: {origin_ip}\r\n"
                f"User-Agent: contentsdn-harness\r\n\r\n").encode()
        self.sim.transmit(self.host, flow, head)

    def on_stream(self, flow, data):
        record = self.outstanding.pop(flow, None)
        if record is None:
            log.warning("%s: unexpected stream %s", self.host, flow)
            return
        self.sim.complete(record, data)


class ProxyEndpoint(Endpoint):
    def __init__(self, sim, host):
        super().__init__(sim, host)
        self.upstream: dict[FlowKey, FlowKey] = {}     # response flow -> client flow
        self.decisions: dict[FlowKey, str] = {}         # client flow -> decision kind

    def on_stream(self, flow, data):
        if flow.dst_ip == self.ip:
            client_flow = self.upstream.pop(flow)
            # transparent: answer as if we were the original destination
            self.sim.transmit(self.host, client_flow.reversed(), data)
        else:
            self._handle_request(flow, data)

    def _handle_request(self, client_flow: FlowKey, data: bytes):
        sim = self.sim
        original = (client_flow.dst_ip, client_flow.dst_port)
        try:
            parsed = parse_get(data, original, sim.index_name)
        except HttpParseError:
            sim.transmit(self.host, client_flow.reversed(),
                         build_response(400, b"bad request\n", "text/plain"))
            return
        source = (self.ip, sim.ephemeral_port())
        if parsed.method == "GET":
            decision = decide(parsed, sim.controller_client, source)
            payload = upstream_head(parsed) + parsed.rest
        else:
            decision = NoProxy()
            payload = data
        self.decisions[client_flow] = decision.kind
        target = original if isinstance(decision, NoProxy) else (decision.ip, decision.port)
        if sim.fabric.host_by_ip(target[0]) is None:
            sim.transmit(self.host, client_flow.reversed(),
                         build_response(502, b"bad gateway\n", "text/plain"))
            return
        up = FlowKey(source[0], source[1], target[0], target[1])
        self.upstream[up.reversed()] = client_flow
        record = sim.records_by_flow.get(str(client_flow))
        if record is not None:
            record.served_by = "cache" if isinstance(decision, Redirect) else "origin"

        sim.transmit(self.host, up, payload)


class OriginEndpoint(Endpoint):
    def __init__(self, sim, host, files):
        super().__init__(sim, host)
        self.files = files
        self.requests: dict[str, int] = {}

    def on_packet(self, pkt):
        if pkt.flow_key.dst_ip == self.ip:
            super().on_packet(pkt)

    def on_stream(self, flow, data):
        try:
            parsed = parse_get(data, (flow.dst_ip, flow.dst_port), self.sim.index_name)
        except HttpParseError:
            self.sim.transmit(self.host, flow.reversed(), build_response(400, b"bad request\n"))
            return
        name = parsed.file_name
        self.requests[name] = self.requests.get(name, 0) + 1
        file = self.files.get(name)
        resp = build_response(200, file.body) if file else build_response(404, b"no such file\n")
        self.sim.transmit(self.host, flow.reversed(), resp)


class CacheEndpoint(Endpoint):
    """Serves on its own address; everything else it sees is forked capture."""

    def __init__(self, sim, host, node: CacheNode):
        super().__init__(sim, host)
        self.node = node

    def on_packet(self, pkt):
        key = pkt.flow_key
        if key.dst_ip == self.ip and key.dst_port == self.node.port:
            super().on_packet(pkt)
        elif key.dst_ip != self.ip:
            self.node.observe_segment(to_segment(pkt))

    def on_stream(self, flow, data):
        try:
            parsed = parse_get(data, (flow.dst_ip, flow.dst_port), self.node.index_name)
            resp = self.node.serve_response(parsed.file_name)
        except HttpParseError:
            resp = build_response(400, b"bad request\n")
        self.sim.transmit(self.host, flow.reversed(), resp)


class _ResilientClient(ControllerClient):
    """Cache-side client whose session calls tolerate an unreachable controller."""

    def heartbeat(self, session_id):
        try:
            super().heartbeat(session_id)
        except (OSError, ControllerRequestError) as exc:
            log.info("heartbeat failed: %s", exc)


@dataclass
class _Event:
    at_ms: float
    order: int
    kind: str
    args: tuple

    def __lt__(self, other):
        return (self.at_ms, self.order) < (other.at_ms, other.order)


class Simulation:
    def __init__(self, scenario: Scenario, content_dir=None, keep_trace: bool = False):
        self.scenario = scenario
        # raw per-injection trace bytes, kept only on request (the digest is always kept)
        self.trace: Optional[list[bytes]] = [] if keep_trace else None
        cfg = scenario.config
        self.topology = scenario.topology
        self.http_port = cfg["http_port"]
        self.index_name = cfg["index_name"]
        self.now_ms = 0.0
        self._events: list[_Event] = []
        self._order = itertools.count()
        self._ports = itertools.count(EPHEMERAL_BASE)
        self._trace_hash = hashlib.sha256()
        self.injections = 0
        self.records: list[RequestRecord] = []
        self.records_by_flow: dict[str, RequestRecord] = {}
        self._wall_start: dict[int, float] = {}
        self._reorder = cfg["reorder_seed"]
        self._dup_rate = float(cfg["duplicate_rate"])

        self.files = generate_files(scenario.files)
        self.fabric = Fabric(self.topology, mtu=cfg["mtu"])
        ctl_cfg = ControllerConfig.from_dict({"http_port": self.http_port, **cfg["controller"]})
        self.controller = Controller(self.fabric, scenario.proxy, ctl_cfg, clock=self.clock,
                                     notify=self._notify)
        self.controller.install_routing()
        self.controller.install_nat_rules(scenario.client_switch, scenario.proxy)
        self.api = ControllerServer(self.controller).start()
        self._api_running = True
        self.controller_client = ControllerClient(self.api.url)

        self._tmp = None
        if content_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="contentsdn-cache-")
            content_dir = self._tmp.name
        self.endpoints: dict[str, Endpoint] = {}
        self.cache_nodes: dict[str, CacheNode] = {}
        for i, host in enumerate(scenario.caches):
            store = ContentStore(f"{content_dir}/{host}", cfg["cache_capacity_bytes"],
                                 clock=self.clock)
            node = CacheNode(self.topology.ip_of(host), cfg["cache_port"], store,
                             _ResilientClient(self.api.url), clock=self.clock,
                             index_name=self.index_name)
            self.cache_nodes[host] = node
            self.endpoints[host] = CacheEndpoint(self, host, node)
        for host in scenario.origins:
            mine = {f.name: self.files[f.name] for f in scenario.files
                    if scenario.origin_of(f) == host}
            self.endpoints[host] = OriginEndpoint(self, host, mine)
        self.endpoints[scenario.proxy] = ProxyEndpoint(self, scenario.proxy)
        for req in scenario.requests:
            if req.client not in self.endpoints:
                self.endpoints[req.client] = ClientEndpoint(self, req.client)

        for node in self.cache_nodes.values():
            node.register()
        if cfg["controller_down"]:
            self.stop_controller()

    # -- plumbing ---------------------------------------------------------

    def clock(self) -> float:
        return self.now_ms / 1000.0

    def ephemeral_port(self) -> int:
        return next(self._ports)

    def stop_controller(self) -> None:
        if self._api_running:
            self.api.stop()
            self._api_running = False

    def _notify(self, session, meta) -> None:
        for node in self.cache_nodes.values():
            if node.session_id == session.session_id:
                node.expect_content(meta.dst_ip, meta.file_name)

    def schedule(self, at_ms: float, kind: str, *args) -> None:
        heapq.heappush(self._events, _Event(at_ms, next(self._order), kind, args))

    def transmit(self, host: str, flow: FlowKey, data: bytes) -> None:
        """Send ``data`` on ``flow``: a SYN, then MTU-sized segments, the last with FIN.

        The SYN stands in for the handshake and always goes first; with
        ``reorder_seed`` set the data segments are shuffled and some duplicated.
        """
        mtu = self.fabric.mtu
        isn = zlib.crc32(str(flow).encode())
        chunks = [data[i:i + mtu] for i in range(0, len(data), mtu)] or [b""]
        packets = []
        for i, chunk in enumerate(chunks):
            flags = {"ACK", "FIN"} if i == len(chunks) - 1 else {"ACK"}
            packets.append(Packet(flow, chunk, frozenset(flags),
                                  (isn + 1 + i * mtu) % SEQ_MOD))
        if self._reorder is not None:
            rng = random.Random(f"{self._reorder}/{flow}")
            rng.shuffle(packets)
            packets += [p for p in packets if rng.random() < self._dup_rate]
        packets.insert(0, Packet(flow, b"", frozenset({"SYN", "ACK"}), isn))
        for pkt in packets:
            trace = self.fabric.inject_packet(host, pkt)
            self.injections += 1
            raw = trace.to_bytes()
            self._trace_hash.update(raw)
            if self.trace is not None:
                self.trace.append(raw)
            for d in trace.deliveries:
                self.schedule(self.now_ms + d.latency_ms, "deliver", d.host, d.packet)

    # -- requests ---------------------------------------------------------

    def start_request(self, index: int) -> None:
        req = self.scenario.requests[index]
        spec = self.scenario.file(req.file)
        origin_ip = self.topology.ip_of(self.scenario.origin_of(spec))
        record = RequestRecord(index=index, file_name=req.file, client=req.client,
                               start_ms=self.now_ms)
        self.records.append(record)
        self._wall_start[index] = time.perf_counter()
        self.endpoints[req.client].request(record, origin_ip)
        self.records_by_flow[record.flow] = record

    def complete(self, record: RequestRecord, data: bytes) -> None:
        record.end_ms = round(self.now_ms, 9)
        record.latency_ms = round(record.end_ms - record.start_ms, 9)
        record.processing_ms = (time.perf_counter() - self._wall_start[record.index]) * 1000
        try:
            resp = parse_response(data)
        except HttpParseError as exc:
            record.error = f"unparsable response: {exc}"
            return
        record.status = resp.status
        record.bytes = len(resp.body)
        record.body_digest = hashlib.sha256(resp.body).hexdigest()
        expected = self.files[record.file_name].digest
        record.ok = resp.status == 200 and record.body_digest == expected
        if not record.ok:
            record.error = f"status {resp.status}, digest mismatch" if resp.status == 200 \
                else f"status {resp.status}"

    def _heartbeat(self) -> None:
        for node in self.cache_nodes.values():
            if node.session_id is not None:
                node.heartbeat()
        if any(e.kind != "heartbeat" for e in self._events):
            self.schedule(self.now_ms + self.controller.config.heartbeat_interval_s * 1000,
                          "heartbeat")

    # -- main loop --------------------------------------------------------

    def run(self) -> Report:
        wall = time.perf_counter()
        for i, req in enumerate(self.scenario.requests):
            self.schedule(req.at_ms, "request", i)
        self.schedule(self.controller.config.heartbeat_interval_s * 1000, "heartbeat")
        try:
            while self._events:
                ev = heapq.heappop(self._events)
                self.now_ms = ev.at_ms
                if ev.kind == "request":
                    self.start_request(*ev.args)
                elif ev.kind == "deliver":
                    host, pkt = ev.args
                    endpoint = self.endpoints.get(host)
                    if endpoint is not None:
                        endpoint.on_packet(pkt)
                elif ev.kind == "heartbeat":
                    self._heartbeat()
        finally:
            self.stop_controller()
            if self._tmp is not None:
                self._tmp.cleanup()

        origin_requests = {f.name: 0 for f in self.scenario.files}
        for host in self.scenario.origins:
            for name, n in self.endpoints[host].requests.items():
                origin_requests[name] = origin_requests.get(name, 0) + n
        self.records.sort(key=lambda r: r.index)
        report = Report(
            scenario=self.scenario.name,
            config={"scenario": self.scenario.config,
                    "controller": self.controller.config.to_dict(),
                    "roles": {"proxy": self.scenario.proxy, "caches": self.scenario.caches,
                              "origins": self.scenario.origins,
                              "client_switch": self.scenario.client_switch}},
            records=self.records,
            manifest={name: {"size": len(f.body), "digest": f.digest}
                      for name, f in self.files.items()},
            aggregates=summarize(self.records, origin_requests),
            trace_digest=self._trace_hash.hexdigest(),
            injections=self.injections,
            wall_clock_s=time.perf_counter() - wall,
        )
        return report


def run_scenario(scenario: Scenario, content_dir=None, strict: bool = True) -> Report:
    """Run ``scenario`` and return its report.

    With ``strict`` (default) a failed or corrupted request raises
    :class:`ScenarioError` naming it; the report is attached to the error.
    """
    report = Simulation(scenario, content_dir).run()
    if strict:
        bad = [r for r in report.records if not r.ok]
        if bad:
            first = bad[0]
            raise ScenarioError(
                f"request #{first.index} ({first.file_name}) failed: "
                f"{first.error or 'no response'}", report=report)
    return report
