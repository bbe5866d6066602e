from __future__ import annotations

from dataclasses import dataclass

from ..httpmsg import (MAX_HEAD_BYTES, HttpParseError, header, name_from_target,
                       parse_headers, split_head)

METHODS = {"GET", "HEAD", "POST", "PUT", "DELETE", "OPTIONS", "PATCH", "CONNECT", "TRACE"}


@dataclass(frozen=True)
class ParsedRequest:
    method: str
    target: str
    file_name: str
    host: str
    original_dst_ip: str
    original_dst_port: int
    headers: tuple
    raw: bytes          # full head including the blank line
    rest: bytes = b""   # bytes after the head (request body, if any)


def parse_get(raw: bytes, original_dst: tuple[str, int], index_name: str = "index.html",
              limit: int = MAX_HEAD_BYTES) -> ParsedRequest:
    """Parse a client's request head.

    Raises ``IncompleteHead`` if the head is not complete yet, ``HeadTooLarge``
    past ``limit`` bytes, and ``HttpParseError`` for a malformed request line.
    Non-GET methods parse fine; deciding what to do with them is up to the caller.
    """
    head, rest = split_head(raw, limit)
    lines = head.split(b"\r\n")
    parts = lines[0].split(b" ")
    if len(parts) != 3 or not parts[2].startswith(b"HTTP/1."):
        raise HttpParseError(f"malformed request line {lines[0][:80]!r}")
    method = parts[0].decode("ascii", "replace")
    if method not in METHODS:
        raise HttpParseError(f"unknown method {method!r}")
    target = parts[1].decode("latin-1")
    if not target:
        raise HttpParseError("empty request target")
    headers = tuple(parse_headers(lines[1:]))
    host = header(headers, "Host", "")
    dst_ip, dst_port = original_dst
    return ParsedRequest(method=method, target=target,
                         file_name=name_from_target(target, index_name), host=host,
                         original_dst_ip=dst_ip, original_dst_port=dst_port,
                         headers=headers, raw=raw[:len(head) + 4], rest=rest)


def upstream_head(parsed: ParsedRequest) -> bytes:
    """The request head as sent upstream: unchanged apart from ``Connection: close``."""
    lines = parsed.raw[:-4].split(b"\r\n")
    kept = [lines[0]] + [ln for ln in lines[1:]
                         if not ln.lower().startswith((b"connection:", b"proxy-connection:",
                                                       b"keep-alive:"))]
    kept.append(b"Connection: close")
    return b"\r\n".join(kept) + b"\r\n\r\n"
