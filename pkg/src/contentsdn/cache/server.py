"""HTTP endpoint serving stored content at ``GET /<file-name>``."""
from __future__ import annotations

import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..httpmsg import name_from_target
from .node import CacheNode

log = logging.getLogger(__name__)


class _Handler(BaseHTTPRequestHandler):
    node: CacheNode = None
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    def do_GET(self):
        name = name_from_target(self.path, self.node.index_name)
        status, body = self.node.serve(name)
        if status != 200:
            body = b"not cached\n"
        self.send_response(status)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Content-Type",
                         "application/octet-stream" if status == 200 else "text/plain")
        self.send_header("Connection", "close")
        self.end_headers()
        self.wfile.write(body)
        self.close_connection = True


class CacheServer:
    def __init__(self, node: CacheNode, host: str = "127.0.0.1", port: int = 0):
        handler = type("CacheHandler", (_Handler,), {"node": node})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self._thread = None

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address[:2]

    def start(self) -> "CacheServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever,
                                        name="cache-http", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
