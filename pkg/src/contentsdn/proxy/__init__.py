from .decision import NoProxy, Passthrough, ProxyDecision, Redirect, decide
from .request import ParsedRequest, parse_get, upstream_head
from .server import ProxyServer, TransferSummary, relay

__all__ = [
    "NoProxy", "ParsedRequest", "Passthrough", "ProxyDecision", "ProxyServer", "Redirect",
    "TransferSummary", "decide", "parse_get", "relay", "upstream_head",
]
