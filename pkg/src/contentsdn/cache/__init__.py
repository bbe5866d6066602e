from .node import CacheNode, IngestResult, UnsupportedResponse, extract_body
from .reassembly import (FlowAbandoned, FlowBuffer, IncompleteStream, Reassembler, TcpSegment,
                         reassemble_segments)
from .replay import read_replay, write_replay
from .server import CacheServer
from .store import CacheEntry, ContentStore, StoreError

__all__ = [
    "CacheEntry", "CacheNode", "CacheServer", "ContentStore", "FlowAbandoned", "FlowBuffer",
    "IncompleteStream", "IngestResult", "Reassembler", "StoreError", "TcpSegment",
    "UnsupportedResponse", "extract_body", "read_replay", "reassemble_segments", "write_replay",
]
