"""Rebuild one-directional TCP byte streams from captured segments.

Retransmissions (a repeated sequence number) are discarded, segments are
ordered by sequence number, and the stream is handed out once a FIN has been
seen and the bytes up to it are contiguous. A SYN, when captured, pins the
stream start; otherwise the lowest observed sequence number is taken as it.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..fabric import FlowKey

SEQ_MOD = 1 << 32
DEFAULT_MAX_FLOW_BYTES = 16 * 1024 * 1024
DEFAULT_FLOW_TIMEOUT_S = 60.0


class ReassemblyError(Exception):
    pass


class IncompleteStream(ReassemblyError):
    """The captured segments do not cover the stream contiguously."""


class FlowAbandoned(ReassemblyError):
    """A flow grew past the per-flow buffer cap and was dropped."""


@dataclass(frozen=True)
class TcpSegment:
    flow_key: FlowKey
    seq: int
    payload: bytes = b""
    fin: bool = False
    syn: bool = False      # a SYN carries no data and consumes one sequence number

    def __post_init__(self):
        if not isinstance(self.seq, int) or not 0 <= self.seq < SEQ_MOD:
            raise ValueError(f"seq must be a 32-bit unsigned integer, got {self.seq!r}")
        if self.syn and self.payload:
            raise ValueError("a SYN segment carries no payload here")
        if not self.payload and not (self.fin or self.syn):
            raise ValueError("only a FIN or SYN segment may have an empty payload")


@dataclass
class FlowBuffer:
    flow_key: FlowKey
    first_seen: float
    segments: dict = field(default_factory=dict)    # seq -> payload
    fin_seen: bool = False
    fin_end: Optional[int] = None                    # relative offset of the stream end
    syn_start: Optional[int] = None                  # relative offset of the first data byte
    retained: int = 0
    _ref: Optional[int] = None

    def rel(self, seq: int) -> int:
        """Offset of ``seq`` from the first observed one, allowing 32-bit wrap."""
        d = (seq - self._ref) % SEQ_MOD
        return d - SEQ_MOD if d >= SEQ_MOD // 2 else d

    def add(self, seg: TcpSegment) -> bool:
        """Store ``seg``; False if it was a retransmission of a known seq."""
        if self._ref is None:
            self._ref = seg.seq
        if seg.syn:
            if self.syn_start is not None:
                return False
            self.syn_start = self.rel(seg.seq) + 1
            return True
        new_fin = seg.fin and not self.fin_seen
        if new_fin:
            self.fin_seen = True
            self.fin_end = self.rel(seg.seq) + len(seg.payload)
        if not seg.payload:           # bare FIN: nothing to buffer
            return new_fin
        if seg.seq in self.segments:
            return False
        self.segments[seg.seq] = seg.payload
        self.retained += len(seg.payload)
        return True

    @property
    def start(self) -> Optional[int]:
        """Offset of the first stream byte: after the SYN if seen, else the lowest seq."""
        if self.syn_start is not None:
            return self.syn_start
        if self.segments:
            return min(self.rel(s) for s in self.segments)
        return self.fin_end

    def ordered(self) -> list[tuple[int, bytes]]:
        return sorted((self.rel(s), p) for s, p in self.segments.items())

    def assemble(self) -> bytes:
        """Concatenate payloads in sequence order; raise on any hole."""
        if not self.fin_seen:
            raise IncompleteStream(f"{self.flow_key}: no FIN seen")
        start = self.start
        cursor = start
        out = []
        for off, payload in self.ordered():
            end = off + len(payload)
            if end <= cursor:
                continue
            if off > cursor:
                raise IncompleteStream(f"{self.flow_key}: gap at offset {cursor - start}")
            out.append(payload[cursor - off:])
            cursor = end
        if cursor < self.fin_end:
            raise IncompleteStream(
                f"{self.flow_key}: data ends at {cursor - start}, FIN at {self.fin_end - start}")
        return b"".join(out)[:self.fin_end - start]

    def complete(self, require_syn: bool = False) -> bool:
        if not self.fin_seen or (require_syn and self.syn_start is None):
            return False
        # cheap necessary condition before the full walk
        if self.retained < self.fin_end - self.start:
            return False
        try:
            self.assemble()
        except IncompleteStream:
            return False
        return True


class Reassembler:
    """Per-flow buffers for everything a capture point sees."""

    def __init__(self, max_flow_bytes: int = DEFAULT_MAX_FLOW_BYTES,
                 flow_timeout_s: float = DEFAULT_FLOW_TIMEOUT_S,
                 clock: Callable[[], float] = time.monotonic, require_syn: bool = False):
        self.max_flow_bytes = max_flow_bytes
        self.flow_timeout_s = flow_timeout_s
        self.clock = clock
        # Without a SYN the stream start is only a guess (the lowest seq seen),
        # so a reordered flow could look complete before its head arrives.
        self.require_syn = require_syn
        self.flows: dict[FlowKey, FlowBuffer] = {}
        self.closed: dict[FlowKey, float] = {}       # finished flows -> when
        self.duplicates = 0
        self.abandoned = 0

    def observe_segment(self, segment: TcpSegment) -> bool:
        """Buffer a segment. Returns True once the flow can be reassembled."""
        key = segment.flow_key
        if key in self.closed:
            if not segment.syn:           # late retransmission of a finished flow
                self.duplicates += 1
                return False
            del self.closed[key]          # a new connection reusing the 4-tuple
        buf = self.flows.get(key)
        if buf is None:
            buf = self.flows[key] = FlowBuffer(key, self.clock())
        if not buf.add(segment):
            self.duplicates += 1
        if buf.retained > self.max_flow_bytes:
            del self.flows[key]
            self.abandoned += 1
            raise FlowAbandoned(f"{key}: over {self.max_flow_bytes} buffered bytes")
        return buf.fin_seen and buf.complete(self.require_syn)

    def reassemble(self, flow_key: FlowKey) -> bytes:
        """Return the full stream and forget the flow (also on error)."""
        buf = self.flows.pop(flow_key, None)
        if buf is None:
            raise IncompleteStream(f"{flow_key}: no segments")
        self.closed[flow_key] = self.clock()
        return buf.assemble()

    def purge_stale(self) -> list[FlowKey]:
        """Drop unfinished flows and closed-flow markers older than the timeout."""
        now = self.clock()
        stale = [k for k, b in self.flows.items() if now - b.first_seen > self.flow_timeout_s]
        for key in stale:
            del self.flows[key]
        for key, at in list(self.closed.items()):
            if now - at > self.flow_timeout_s:
                del self.closed[key]
        return stale


def reassemble_segments(segments) -> bytes:
    """One-shot helper: reassemble an iterable of segments from a single flow."""
    buf = None
    for seg in segments:
        if buf is None:
            buf = FlowBuffer(seg.flow_key, 0.0)
        buf.add(seg)
    if buf is None:
        raise IncompleteStream("no segments")
    return buf.assemble()
