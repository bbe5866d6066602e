"""Length-prefixed binary capture files for offline reassembly.

File layout: the magic ``b"CSEG"``, a version byte, then records::

    u32 record-length (bytes that follow)
    u8  len + src-ip (utf-8)    u16 src-port
    u8  len + dst-ip (utf-8)    u16 dst-port
    u32 seq
    u8  flags (bit 0 = FIN, bit 1 = SYN)
    ... payload (rest of the record)

All integers are big-endian.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Iterator

from ..fabric import FlowKey
from .reassembly import TcpSegment

MAGIC = b"CSEG"
VERSION = 1
FLAG_FIN = 0x01
FLAG_SYN = 0x02


class ReplayFormatError(ValueError):
    pass


def encode_segment(seg: TcpSegment) -> bytes:
    key = seg.flow_key
    src, dst = key.src_ip.encode(), key.dst_ip.encode()
    body = (struct.pack("!B", len(src)) + src + struct.pack("!H", key.src_port)
            + struct.pack("!B", len(dst)) + dst + struct.pack("!H", key.dst_port)
            + struct.pack("!IB", seg.seq, (FLAG_FIN if seg.fin else 0) | (FLAG_SYN if seg.syn else 0)) + seg.payload)
    return struct.pack("!I", len(body)) + body


def write_replay(path, segments: Iterable[TcpSegment]) -> int:
    n = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]))
        for seg in segments:
            fh.write(encode_segment(seg))
            n += 1
    return n


def _decode(rec: bytes) -> TcpSegment:
    try:
        pos = 0
        (n,) = struct.unpack_from("!B", rec, pos); pos += 1
        src = rec[pos:pos + n].decode(); pos += n
        (sport,) = struct.unpack_from("!H", rec, pos); pos += 2
        (n,) = struct.unpack_from("!B", rec, pos); pos += 1
        dst = rec[pos:pos + n].decode(); pos += n
        (dport,) = struct.unpack_from("!H", rec, pos); pos += 2
        seq, flags = struct.unpack_from("!IB", rec, pos); pos += 5
        return TcpSegment(FlowKey(src, sport, dst, dport), seq, rec[pos:],
                          fin=bool(flags & FLAG_FIN), syn=bool(flags & FLAG_SYN))
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise ReplayFormatError(f"corrupt record: {exc}") from exc


def read_replay(path) -> Iterator[TcpSegment]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ReplayFormatError("not a capture replay file")
    if data[4:5] != bytes([VERSION]):
        raise ReplayFormatError(f"unsupported replay version {data[4:5]!r}")
    pos = 5
    while pos < len(data):
        if pos + 4 > len(data):
            raise ReplayFormatError("truncated record header")
        (length,) = struct.unpack_from("!I", data, pos)
        pos += 4
        if pos + length > len(data):
            raise ReplayFormatError("truncated record")
        yield _decode(data[pos:pos + length])
        pos += length
