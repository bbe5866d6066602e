"""Small HTTP/1.1 message helpers shared by the proxy, cache and harness."""
from __future__ import annotations

from dataclasses import dataclass, field

HEAD_END = b"\r\n\r\n"
MAX_HEAD_BYTES = 16 * 1024

REASONS = {200: "OK", 400: "Bad Request", 404: "Not Found", 431: "Request Header Fields Too Large",
           500: "Internal Server Error", 502: "Bad Gateway"}


class HttpParseError(ValueError):
    pass


class IncompleteHead(HttpParseError):
    """More bytes are needed before the head can be parsed."""


class HeadTooLarge(HttpParseError):
    pass


def split_head(data: bytes, limit: int = MAX_HEAD_BYTES) -> tuple[bytes, bytes]:
    """Return ``(head, rest)`` where head excludes the blank line."""
    idx = data.find(HEAD_END, 0, limit + len(HEAD_END))
    if idx < 0:
        if len(data) > limit:
            raise HeadTooLarge(f"message head exceeds {limit} bytes")
        raise IncompleteHead("no end of head yet")
    return data[:idx], data[idx + len(HEAD_END):]


def parse_headers(lines: list[bytes]) -> list[tuple[str, str]]:
    headers = []
    for line in lines:
        if not line:
            continue
        name, sep, value = line.partition(b":")
        if not sep or not name.strip() or name != name.strip():
            raise HttpParseError(f"malformed header line {line!r}")
        headers.append((name.decode("latin-1"), value.strip().decode("latin-1")))
    return headers


def header(headers, name: str, default=None):
    name = name.lower()
    for k, v in headers:
        if k.lower() == name:
            return v
    return default


@dataclass
class Response:
    status: int
    reason: str
    headers: list = field(default_factory=list)
    body: bytes = b""
    length_delimited: bool = True
    chunked: bool = False


def parse_response(stream: bytes) -> Response:
    """Parse a complete response stream (head + body)."""
    try:
        head, rest = split_head(stream, limit=max(MAX_HEAD_BYTES, 64 * 1024))
    except IncompleteHead:
        raise HttpParseError("response head is incomplete") from None
    lines = head.split(b"\r\n")
    parts = lines[0].split(b" ", 2)
    if len(parts) < 2 or not parts[0].startswith(b"HTTP/1.") or not parts[1].isdigit():
        raise HttpParseError(f"malformed status line {lines[0][:80]!r}")
    status = int(parts[1])
    reason = parts[2].decode("latin-1") if len(parts) > 2 else ""
    headers = parse_headers(lines[1:])
    te = header(headers, "Transfer-Encoding")
    if te is not None and "chunked" in te.lower():
        return Response(status, reason, headers, rest, length_delimited=False, chunked=True)
    length = header(headers, "Content-Length")
    if length is None:
        return Response(status, reason, headers, rest, length_delimited=False)
    if not length.isdigit():
        raise HttpParseError(f"bad Content-Length {length!r}")
    n = int(length)
    if len(rest) < n:
        raise HttpParseError(f"body is {len(rest)} bytes, Content-Length says {n}")
    return Response(status, reason, headers, rest[:n])


def build_response(status: int, body: bytes = b"", content_type="application/octet-stream",
                   extra=()) -> bytes:
    lines = [f"HTTP/1.1 {status} {REASONS.get(status, 'Unknown')}",
             f"Content-Length: {len(body)}",
             f"Content-Type: {content_type}",
             "Connection: close"]
    lines.extend(f"{k}: {v}" for k, v in extra)
    return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1") + body


def name_from_target(target: str, index_name: str = "index.html") -> str:
    """Content name for a request target: path without the leading slash.

    The query string stays part of the name; ``/`` maps to ``index_name``.
    Absolute-form targets (``http://host/path``) are reduced to their path.
    """
    if "://" in target:
        after = target.split("://", 1)[1]
        slash = after.find("/")
        target = after[slash:] if slash >= 0 else "/"
    name = target[1:] if target.startswith("/") else target
    if not name or name.startswith("?"):
        name = index_name + name
    return name
