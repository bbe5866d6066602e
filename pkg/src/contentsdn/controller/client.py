"""Blocking client for the controller's HTTP/JSON API."""
from __future__ import annotations

import http.client
import json
from typing import Optional
from urllib.parse import quote, urlencode, urlsplit


class ControllerUnavailable(ConnectionError):
    """The controller could not be reached."""


class ControllerRequestError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(f"controller returned {status}: {message}")
        self.status = status


class ControllerClient:
    """One short-lived HTTP connection per call; safe to share between threads."""

    def __init__(self, base_url: str, timeout: float = 5.0):
        parts = urlsplit(base_url)
        if parts.scheme != "http" or not parts.hostname:
            raise ValueError(f"controller URL must be http://host:port, got {base_url!r}")
        self.base_url = base_url.rstrip("/")
        self.host = parts.hostname
        self.port = parts.port or 80
        self.timeout = timeout

    def _call(self, method: str, path: str, body: dict = None):
        payload = None if body is None else json.dumps(body).encode("utf-8")
        headers = {"Connection": "close"}
        if payload is not None:
            headers["Content-Type"] = "application/json"
        conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
        try:
            conn.request(method, path, body=payload, headers=headers)
            resp = conn.getresponse()
            raw = resp.read()
        except (OSError, http.client.HTTPException) as exc:
            raise ControllerUnavailable(f"{method} {self.base_url}{path}: {exc}") from exc
        finally:
            conn.close()
        data = json.loads(raw) if raw else None
        return resp.status, data

    def _expect(self, status, data, *ok):
        if status not in ok:
            msg = data.get("error", "") if isinstance(data, dict) else ""
            raise ControllerRequestError(status, msg)

    # -- proxy side -------------------------------------------------------

    def lookup_content(self, file_name: str) -> Optional[tuple[str, int]]:
        status, data = self._call("GET", "/content?" + urlencode({"name": file_name}))
        if status == 404:
            return None
        self._expect(status, data, 200)
        return data["ip"], data["port"]

    def report_metadata(self, file_name: str, dst_ip: str, dst_port: int,
                        src_ip: str, src_port: int) -> None:
        status, data = self._call("POST", "/metadata", {
            "file_name": file_name, "dst_ip": dst_ip, "dst_port": dst_port,
            "src_ip": src_ip, "src_port": src_port})
        self._expect(status, data, 204)

    # -- cache side -------------------------------------------------------

    def pending(self, source_ip: str) -> Optional[str]:
        status, data = self._call("GET", "/pending?" + urlencode({"source_ip": source_ip}))
        if status == 404:
            return None
        self._expect(status, data, 200)
        return data["file_name"]

    def register(self, ip: str, port: int, capacity_bytes: int,
                 ops=("store", "serve")) -> str:
        status, data = self._call("POST", "/storage/register", {
            "ip": ip, "port": port, "capacity_bytes": capacity_bytes, "ops": sorted(ops)})
        self._expect(status, data, 200)
        return data["session_id"]

    def heartbeat(self, session_id: str) -> None:
        self._expect(*self._call("POST", "/storage/heartbeat", {"session_id": session_id}), 204)

    def report_stats(self, session_id: str, used_bytes: int, object_count: int,
                     evicted=()) -> None:
        body = {"session_id": session_id, "used_bytes": used_bytes,
                "object_count": object_count}
        if evicted:
            body["evicted"] = list(evicted)
        self._expect(*self._call("POST", "/storage/stats", body), 204)

    def confirm(self, session_id: str, file_name: str) -> None:
        self._expect(*self._call("POST", "/storage/confirm", {
            "session_id": session_id, "file_name": file_name}), 204)

    def deregister(self, session_id: str) -> None:
        self._expect(*self._call("DELETE", "/storage/session/" + quote(session_id, safe="")), 204)

    def admin_state(self) -> dict:
        status, data = self._call("GET", "/admin/state")
        self._expect(status, data, 200)
        return data


class LocalControllerClient:
    """Same interface as :class:`ControllerClient`, calling a Controller in-process.

    Controller errors surface as :class:`ControllerRequestError` with the status
    the HTTP API would have returned, so callers behave identically either way.
    """

    def __init__(self, controller):
        self.controller = controller

    def _call(self, fn, *args):
        from .core import ControllerError
        try:
            return fn(*args)
        except ControllerError as exc:
            raise ControllerRequestError(exc.status, str(exc)) from exc

    def lookup_content(self, file_name):
        return self._call(self.controller.lookup_content, file_name)

    def report_metadata(self, file_name, dst_ip, dst_port, src_ip, src_port):
        from .core import ContentMetadata
        self._call(lambda: self.controller.report_metadata(
            ContentMetadata(file_name, dst_ip, dst_port, src_ip, src_port)))

    def pending(self, source_ip):
        return self._call(self.controller.cache_query, source_ip)

    def register(self, ip, port, capacity_bytes, ops=("store", "serve")):
        from .core import StorageCapability
        return self._call(lambda: self.controller.register_storage(
            StorageCapability(ip, port, capacity_bytes, frozenset(ops))))

    def heartbeat(self, session_id):
        self._call(self.controller.heartbeat, session_id)

    def report_stats(self, session_id, used_bytes, object_count, evicted=()):
        self._call(self.controller.report_stats, session_id, used_bytes, object_count,
                   list(evicted))

    def confirm(self, session_id, file_name):
        self._call(self.controller.confirm_stored, session_id, file_name)

    def deregister(self, session_id):
        self._call(self.controller.deregister_storage, session_id)

    def admin_state(self):
        return self._call(self.controller.state)
