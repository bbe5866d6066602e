"""The cache element: capture -> reassemble -> name via controller -> store -> serve."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional

from ..controller.client import ControllerRequestError
from ..fabric import FlowKey
from ..httpmsg import HttpParseError, build_response, parse_response
from .reassembly import (DEFAULT_FLOW_TIMEOUT_S, DEFAULT_MAX_FLOW_BYTES, FlowAbandoned,
                         IncompleteStream, Reassembler, TcpSegment)
from .store import ContentStore, StoreError

log = logging.getLogger(__name__)


class UnsupportedResponse(HttpParseError):
    """Response is well-formed but not cacheable (chunked or close-delimited)."""


def extract_body(stream: bytes) -> tuple[int, bytes]:
    """Split a reassembled response stream into ``(status, body)``."""
    resp = parse_response(stream)
    if resp.chunked:
        raise UnsupportedResponse("chunked transfer encoding is not cached")
    if not resp.length_delimited:
        raise UnsupportedResponse("response without Content-Length is not cached")
    return resp.status, resp.body


@dataclass
class IngestResult:
    flow_key: FlowKey
    outcome: str                  # stored | discarded | incomplete | unparsable | error
    file_name: Optional[str] = None
    detail: str = ""


class CacheNode:
    """Glue between the capture path, the content store and the controller.

    ``controller`` is anything with the :class:`ControllerClient` cache-side
    methods (``register``, ``heartbeat``, ``report_stats``, ``pending``,
    ``confirm``).
    """

    def __init__(self, ip: str, port: int, store: ContentStore, controller,
                 clock: Callable[[], float] = time.monotonic,
                 max_flow_bytes: int = DEFAULT_MAX_FLOW_BYTES,
                 flow_timeout_s: float = DEFAULT_FLOW_TIMEOUT_S,
                 index_name: str = "index.html", require_syn: bool = True):
        self.ip = ip
        self.port = port
        self.store = store
        self.controller = controller
        self.index_name = index_name
        self.reassembler = Reassembler(max_flow_bytes, flow_timeout_s, clock, require_syn)
        self.session_id: Optional[str] = None
        self.expected: dict[str, str] = {}      # origin ip -> file name hinted by controller
        self.results: list[IngestResult] = []
        self._evicted: list[str] = []           # dropped since the last stats report

    # -- controller session ----------------------------------------------

    def register(self) -> str:
        self.session_id = self.controller.register(self.ip, self.port, self.store.capacity_bytes)
        return self.session_id

    def heartbeat(self) -> None:
        self.controller.heartbeat(self.session_id)

    def report_stats(self) -> None:
        evicted = [n for n in self._evicted if n not in self.store]
        if evicted:
            self.controller.report_stats(self.session_id, self.store.used_bytes,
                                         len(self.store), evicted)
        else:
            self.controller.report_stats(self.session_id, self.store.used_bytes, len(self.store))
        self._evicted = []

    def deregister(self) -> None:
        self.controller.deregister(self.session_id)
        self.session_id = None

    def expect_content(self, origin_ip: str, file_name: str) -> None:
        """Controller hint that a named response from ``origin_ip`` is on its way."""
        self.expected[origin_ip] = file_name

    # -- ingest -----------------------------------------------------------

    def observe_segment(self, segment: TcpSegment) -> Optional[IngestResult]:
        """Feed one captured segment; runs the store pipeline when the flow completes."""
        try:
            ready = self.reassembler.observe_segment(segment)
        except FlowAbandoned as exc:
            return self._record(IngestResult(segment.flow_key, "error", detail=str(exc)))
        if not ready:
            return None
        return self.ingest_flow(segment.flow_key)

    def ingest_flow(self, flow_key: FlowKey) -> IngestResult:
        try:
            stream = self.reassembler.reassemble(flow_key)
        except IncompleteStream as exc:
            return self._record(IngestResult(flow_key, "incomplete", detail=str(exc)))
        try:
            status, body = extract_body(stream)
        except HttpParseError as exc:
            return self._record(IngestResult(flow_key, "unparsable", detail=str(exc)))
        name = self.resolve_and_store(flow_key, status, body)
        if name is None:
            return self._record(IngestResult(flow_key, "discarded", detail=f"status {status}"))
        return self._record(IngestResult(flow_key, "stored", name))

    def _record(self, result: IngestResult) -> IngestResult:
        self.results.append(result)
        if result.outcome != "stored":
            log.info("flow %s %s %s", result.flow_key, result.outcome, result.detail)
        return result

    def resolve_and_store(self, flow_key: FlowKey, status: int, body: bytes) -> Optional[str]:
        """Name the stream via the controller, persist it and confirm."""
        if status != 200:
            return None
        try:
            name = self.controller.pending(flow_key.src_ip)
        except (OSError, ControllerRequestError) as exc:
            log.warning("controller query failed for %s: %s", flow_key, exc)
            return None
        if name is None:
            return None
        self.expected.pop(flow_key.src_ip, None)
        try:
            self._evicted += self.store.put(name, body, origin_ip=flow_key.src_ip)
        except StoreError as exc:
            log.warning("not stored: %s", exc)
            return None
        try:
            self.controller.confirm(self.session_id, name)
            self.report_stats()
        except Exception as exc:   # stored locally; controller can catch up via stats
            log.warning("confirm for %r failed: %s", name, exc)
        return name

    def purge_stale(self) -> list[FlowKey]:
        return self.reassembler.purge_stale()

    def ingest_replay(self, segments) -> list[IngestResult]:
        """Feed a finite capture; at its end, flows that saw a FIN are flushed.

        The flush lets captures without a SYN complete: once the input is
        exhausted no earlier segment can still arrive.
        """
        out = []
        for seg in segments:
            res = self.observe_segment(seg)
            if res is not None:
                out.append(res)
        for key, buf in list(self.reassembler.flows.items()):
            if buf.fin_seen:
                out.append(self.ingest_flow(key))
        return out

    # -- serving ----------------------------------------------------------

    def serve(self, file_name: str) -> tuple[int, bytes]:
        body = self.store.get(file_name)
        if body is None:
            return 404, b""
        return 200, body

    def serve_response(self, file_name: str) -> bytes:
        status, body = self.serve(file_name)
        if status != 200:
            return build_response(404, b"not cached\n", content_type="text/plain")
        return build_response(200, body)
