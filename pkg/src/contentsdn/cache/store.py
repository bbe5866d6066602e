"""Disk-backed content store with LRU eviction under a byte budget."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import quote

log = logging.getLogger(__name__)

INDEX_FILE = "index.json"


class StoreError(Exception):
    pass


@dataclass
class CacheEntry:
    file_name: str
    content_length: int
    origin_ip: str
    stored_at: float
    path: str
    last_served: Optional[float] = None


def disk_name(file_name: str) -> str:
    """Percent-encoded file name that is safe as a single path component."""
    encoded = quote(file_name, safe="")
    if encoded.startswith("."):
        encoded = "%2E" + encoded[1:]
    if len(encoded) > 200 or encoded == INDEX_FILE:
        encoded = "h-" + hashlib.sha256(file_name.encode()).hexdigest()
    return encoded


class ContentStore:
    def __init__(self, content_dir, capacity_bytes: int,
                 clock: Callable[[], float] = time.time):
        if capacity_bytes <= 0:
            raise ValueError("capacity_bytes must be > 0")
        self.dir = Path(content_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.capacity_bytes = capacity_bytes
        self.clock = clock
        self._lock = threading.RLock()
        self._entries: "OrderedDict[str, CacheEntry]" = OrderedDict()   # LRU first
        self.used_bytes = 0
        self._load_index()

    # -- persistence ------------------------------------------------------

    def _load_index(self):
        index = self.dir / INDEX_FILE
        if not index.exists():
            return
        records = json.loads(index.read_text())
        records.sort(key=lambda r: (r.get("last_served") or r["stored_at"]))
        for rec in records:
            entry = CacheEntry(**rec)
            if (self.dir / entry.path).is_file():
                self._entries[entry.file_name] = entry
                self.used_bytes += entry.content_length
        self._evict_for(0)

    def _write_index(self):
        data = json.dumps([asdict(e) for e in self._entries.values()], indent=1)
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=".index-")
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, self.dir / INDEX_FILE)

    # -- operations -------------------------------------------------------

    def __contains__(self, file_name):
        return file_name in self._entries

    def __len__(self):
        return len(self._entries)

    def names(self) -> list[str]:
        with self._lock:
            return list(self._entries)

    def entry(self, file_name: str) -> Optional[CacheEntry]:
        return self._entries.get(file_name)

    def _evict_for(self, incoming: int) -> list[str]:
        evicted = []
        while self._entries and self.used_bytes + incoming > self.capacity_bytes:
            name, entry = self._entries.popitem(last=False)
            self.used_bytes -= entry.content_length
            try:
                (self.dir / entry.path).unlink()
            except FileNotFoundError:
                pass
            evicted.append(name)
            log.info("evicted %r (%d bytes)", name, entry.content_length)
        return evicted

    def put(self, file_name: str, body: bytes, origin_ip: str = "") -> list[str]:
        """Store ``body``; returns names evicted to make room."""
        if not file_name:
            raise StoreError("refusing to store unnamed content")
        size = len(body)
        if size > self.capacity_bytes:
            raise StoreError(f"{file_name!r} ({size} B) exceeds capacity {self.capacity_bytes} B")
        with self._lock:
            old = self._entries.pop(file_name, None)
            if old is not None:
                self.used_bytes -= old.content_length
            evicted = self._evict_for(size)
            path = disk_name(file_name)
            fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=".part-")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(body)
                os.replace(tmp, self.dir / path)
            except OSError as exc:
                Path(tmp).unlink(missing_ok=True)
                raise StoreError(f"could not write {file_name!r}: {exc}") from exc
            self._entries[file_name] = CacheEntry(file_name, size, origin_ip, self.clock(), path)
            self.used_bytes += size
            self._write_index()
            return evicted

    def get(self, file_name: str) -> Optional[bytes]:
        """Body bytes, refreshing the entry's LRU position; None if absent."""
        with self._lock:
            entry = self._entries.get(file_name)
            if entry is None:
                return None
            try:
                body = (self.dir / entry.path).read_bytes()
            except FileNotFoundError:
                self._entries.pop(file_name)
                self.used_bytes -= entry.content_length
                return None
            entry.last_served = self.clock()
            self._entries.move_to_end(file_name)
            return body

    def remove(self, file_name: str) -> None:
        with self._lock:
            entry = self._entries.pop(file_name)
            self.used_bytes -= entry.content_length
            (self.dir / entry.path).unlink(missing_ok=True)
            self._write_index()
