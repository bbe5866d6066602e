"""HTTP/JSON northbound API for the controller."""
from __future__ import annotations

import json
import logging
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, unquote, urlsplit

from .core import ContentMetadata, Controller, ControllerError, InvalidRequest, StorageCapability

log = logging.getLogger(__name__)


def _require(body: dict, *keys):
    missing = [k for k in keys if k not in body]
    if missing:
        raise InvalidRequest(f"missing fields: {missing}")
    return [body[k] for k in keys]


class _Handler(BaseHTTPRequestHandler):
    controller: Controller = None
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    # -- plumbing --------------------------------------------------------

    def _reply(self, status, body=None):
        data = b"" if body is None else json.dumps(body).encode("utf-8")
        self.send_response(status)
        if body is not None:
            self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        if data:
            self.wfile.write(data)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        try:
            body = json.loads(raw.decode("utf-8")) if raw else {}
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InvalidRequest(f"body is not JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise InvalidRequest("body must be a JSON object")
        return body

    def _dispatch(self, method):
        url = urlsplit(self.path)
        query = {k: v[0] for k, v in parse_qs(url.query).items()}
        try:
            status, body = self._route(method, url.path, query)
        except ControllerError as exc:
            status, body = exc.status, {"error": str(exc)}
        except Exception:     # keep the server alive; report as 500
            log.exception("controller API failure on %s %s", method, self.path)
            status, body = HTTPStatus.INTERNAL_SERVER_ERROR, {"error": "internal error"}
        self._reply(status, body)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_DELETE(self):
        self._dispatch("DELETE")

    # -- routes ----------------------------------------------------------

    def _route(self, method, path, query):
        ctl = self.controller
        if method == "GET" and path == "/content":
            if "name" not in query:
                raise InvalidRequest("missing ?name=")
            hit = ctl.lookup_content(query["name"])
            if hit is None:
                return 404, None
            return 200, {"ip": hit[0], "port": hit[1]}
        if method == "POST" and path == "/metadata":
            body = self._body()
            ctl.report_metadata(ContentMetadata(*_require(
                body, "file_name", "dst_ip", "dst_port", "src_ip", "src_port")))
            return 204, None
        if method == "GET" and path == "/pending":
            if "source_ip" not in query:
                raise InvalidRequest("missing ?source_ip=")
            name = ctl.cache_query(query["source_ip"])
            if name is None:
                return 404, None
            return 200, {"file_name": name}
        if method == "POST" and path == "/storage/register":
            body = self._body()
            ip, port, capacity, ops = _require(body, "ip", "port", "capacity_bytes", "ops")
            if not isinstance(ops, list):
                raise InvalidRequest("ops must be a list")
            sid = ctl.register_storage(StorageCapability(ip, port, capacity, frozenset(ops)))
            return 200, {"session_id": sid}
        if method == "POST" and path == "/storage/heartbeat":
            (sid,) = _require(self._body(), "session_id")
            ctl.heartbeat(sid)
            return 204, None
        if method == "POST" and path == "/storage/stats":
            body = self._body()
            sid, used, count = _require(body, "session_id", "used_bytes", "object_count")
            evicted = body.get("evicted", [])
            if not isinstance(evicted, list):
                raise InvalidRequest("evicted must be a list")
            ctl.report_stats(sid, used, count, evicted)
            return 204, None
        if method == "POST" and path == "/storage/confirm":
            sid, name = _require(self._body(), "session_id", "file_name")
            ctl.confirm_stored(sid, name)
            return 204, None
        if method == "DELETE" and path.startswith("/storage/session/"):
            ctl.deregister_storage(unquote(path[len("/storage/session/"):]))
            return 204, None
        if method == "GET" and path == "/admin/state":
            return 200, ctl.state()
        return 404, {"error": f"no route for {method} {path}"}


class ControllerServer:
    """Runs the API on a background thread; ``port=0`` picks a free port."""

    def __init__(self, controller: Controller, host: str = "127.0.0.1", port: int = 0):
        handler = type("ControllerHandler", (_Handler,), {"controller": controller})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self._thread = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ControllerServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever,
                                        name="controller-api", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def serve_forever(self) -> None:
        try:
            self.httpd.serve_forever()
        finally:
            self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
