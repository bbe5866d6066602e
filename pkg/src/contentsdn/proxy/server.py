"""Asyncio transparent HTTP proxy.

Each accepted connection is handled independently: read the request head,
find the original destination, decide via the controller, connect upstream
(the origin or a cache) and shuttle bytes both ways until both sides close.
"""
from __future__ import annotations

import asyncio
import dataclasses
import logging
import socket
import struct
import time
from dataclasses import dataclass
from typing import Callable, Optional

from ..httpmsg import HeadTooLarge, HttpParseError, IncompleteHead, build_response
from .decision import NoProxy, Redirect, decide
from .request import ParsedRequest, parse_get, upstream_head

log = logging.getLogger(__name__)

SO_ORIGINAL_DST = 80
READ_CHUNK = 64 * 1024


@dataclass
class TransferSummary:
    bytes_up: int = 0          # client -> upstream
    bytes_down: int = 0        # upstream -> client
    duration_s: float = 0.0
    decision: str = ""
    target: Optional[tuple] = None
    file_name: Optional[str] = None
    error: Optional[str] = None


def original_destination(sock) -> Optional[tuple[str, int]]:
    """Pre-NAT destination of a REDIRECTed connection (Linux), else None."""
    if sock is None:
        return None
    try:
        raw = sock.getsockopt(socket.SOL_IP, SO_ORIGINAL_DST, 16)
        port, addr = struct.unpack("!2xH4s8x", raw)
        dst = (socket.inet_ntoa(addr), port)
    except (OSError, struct.error, AttributeError):
        return None
    if dst == sock.getsockname()[:2]:
        return None
    return dst


def split_host(value: str, default_port: int = 80) -> tuple[str, int]:
    if value.startswith("["):
        host, _, rest = value[1:].partition("]")
        port = rest[1:] if rest.startswith(":") else ""
    else:
        host, _, port = value.partition(":")
    if not host:
        raise HttpParseError("empty Host header")
    if port and not port.isdigit():
        raise HttpParseError(f"bad port in Host {value!r}")
    return host, int(port) if port else default_port


def _local_ip_toward(ip: str, port: int) -> str:
    probe = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        probe.connect((ip, port))
        return probe.getsockname()[0]
    except OSError:
        return "0.0.0.0"
    finally:
        probe.close()


async def _pump(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> int:
    total = 0
    try:
        while True:
            chunk = await reader.read(READ_CHUNK)
            if not chunk:
                break
            writer.write(chunk)
            await writer.drain()
            total += len(chunk)
    finally:
        if writer.can_write_eof() and not writer.is_closing():
            try:
                writer.write_eof()
            except OSError:
                pass
    return total


async def relay(client: tuple, upstream: tuple, initial: bytes = b"") -> TransferSummary:
    """Copy bytes in both directions until both sides are done.

    ``client`` and ``upstream`` are ``(reader, writer)`` pairs; ``initial`` is
    written upstream first. A failure in either direction closes both sides.
    """
    (c_reader, c_writer), (u_reader, u_writer) = client, upstream
    summary = TransferSummary()
    start = time.perf_counter()
    up = asyncio.ensure_future(_pump(c_reader, u_writer))
    down = asyncio.ensure_future(_pump(u_reader, c_writer))
    try:
        if initial:
            u_writer.write(initial)
            await u_writer.drain()
        # the response direction defines completion; the request side may idle
        summary.bytes_down = await down
        try:
            summary.bytes_up = await asyncio.wait_for(up, timeout=1.0)
        except asyncio.TimeoutError:
            pass
    except (ConnectionError, OSError) as exc:
        summary.error = f"aborted: {exc}"
    finally:
        for task in (up, down):
            task.cancel()
        for w in (u_writer, c_writer):
            w.close()
        for w in (u_writer, c_writer):
            try:
                await w.wait_closed()
            except (ConnectionError, OSError):
                pass
    summary.bytes_up += len(initial)
    summary.duration_s = time.perf_counter() - start
    return summary


class ProxyServer:
    def __init__(self, controller, host: str = "127.0.0.1", port: int = 3128,
                 index_name: str = "index.html", connect_timeout: float = 5.0,
                 original_dst: Callable = original_destination):
        self.controller = controller
        self.host = host
        self.port = port
        self.index_name = index_name
        self.connect_timeout = connect_timeout
        self.original_dst = original_dst
        self.summaries: list[TransferSummary] = []
        self._server: Optional[asyncio.base_events.Server] = None
        self._active: set = set()        # handler tasks still running

    @property
    def address(self) -> tuple[str, int]:
        return self._server.sockets[0].getsockname()[:2]

    async def start(self) -> "ProxyServer":
        self._server = await asyncio.start_server(self.handle, self.host, self.port)
        log.info("proxy listening on %s:%d", *self.address)
        return self

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def stop(self, grace_s: float = 5.0) -> None:
        """Stop accepting, give open connections ``grace_s`` to finish, cancel the rest."""
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        if self._active:
            _, pending = await asyncio.wait(set(self._active), timeout=grace_s)
            for task in pending:
                task.cancel()
            if pending:
                await asyncio.wait(pending)

    # ------------------------------------------------------------------

    async def _reply_and_close(self, writer, status, text: str):
        try:
            writer.write(build_response(status, text.encode() + b"\n", content_type="text/plain"))
            await writer.drain()
        except (ConnectionError, OSError):
            pass
        writer.close()

    async def _read_head(self, reader) -> Optional[bytes]:
        buf = b""
        while True:
            try:
                parse_get(buf, ("", 0), self.index_name)
                return buf
            except IncompleteHead:
                pass
            except HttpParseError:
                return buf          # let the caller report it
            chunk = await reader.read(READ_CHUNK)
            if not chunk:
                return None
            buf += chunk

    async def _resolve(self, parsed: ParsedRequest, sock) -> tuple[str, int]:
        dst = self.original_dst(sock)
        if dst is not None:
            return dst
        if not parsed.host:
            raise HttpParseError("no Host header and no original destination")
        name, port = split_host(parsed.host)
        infos = await asyncio.get_running_loop().getaddrinfo(
            name, port, family=socket.AF_INET, type=socket.SOCK_STREAM)
        return infos[0][4][0], port

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        summary = TransferSummary()
        task = asyncio.current_task()
        self._active.add(task)
        try:
            await self._handle(reader, writer, summary)
        except asyncio.CancelledError:
            summary.error = summary.error or "cancelled at shutdown"
            writer.close()
        except Exception as exc:     # isolate failures to this connection
            log.exception("proxy connection failed")
            summary.error = summary.error or repr(exc)
            writer.close()
        finally:
            self.summaries.append(summary)
            self._active.discard(task)

    async def _handle(self, reader, writer, summary):
        try:
            raw = await self._read_head(reader)
        except (ConnectionError, OSError):
            writer.close()
            return
        if raw is None:
            writer.close()
            return
        try:
            parsed = parse_get(raw, ("", 0), self.index_name)
            dst = await self._resolve(parsed, writer.get_extra_info("socket"))
        except HeadTooLarge:
            summary.error = "head too large"
            return await self._reply_and_close(writer, 431, "request head too large")
        except (HttpParseError, OSError) as exc:
            summary.error = f"bad request: {exc}"
            return await self._reply_and_close(writer, 400, "bad request")
        parsed = dataclasses.replace(parsed, original_dst_ip=dst[0], original_dst_port=dst[1])
        summary.file_name = parsed.file_name

        loop = asyncio.get_running_loop()
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setblocking(False)
        try:
            sock.bind((_local_ip_toward(*dst), 0))
            source = sock.getsockname()[:2]
            if parsed.method == "GET":
                decision = await asyncio.to_thread(decide, parsed, self.controller, source)
            else:
                decision = NoProxy()
            summary.decision = decision.kind
            if isinstance(decision, NoProxy):
                target, payload = dst, raw
            else:
                target = (decision.ip, decision.port)
                payload = upstream_head(parsed) + parsed.rest
            summary.target = target
            await asyncio.wait_for(loop.sock_connect(sock, target), self.connect_timeout)
        except (OSError, asyncio.TimeoutError) as exc:
            sock.close()
            summary.error = f"upstream connect failed: {exc!r}"
            log.info("upstream %s unreachable: %r", summary.target, exc)
            return await self._reply_and_close(writer, 502, "bad gateway")
        u_reader, u_writer = await asyncio.open_connection(sock=sock)
        result = await relay((reader, writer), (u_reader, u_writer), initial=payload)
        summary.bytes_up, summary.bytes_down = result.bytes_up, result.bytes_down
        summary.duration_s, summary.error = result.duration_s, result.error
        if isinstance(decision, Redirect):
            log.info("%r served from cache %s:%d", parsed.file_name, *target)
