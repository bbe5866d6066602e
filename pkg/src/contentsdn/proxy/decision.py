from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

from .request import ParsedRequest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Redirect:
    ip: str
    port: int
    kind = "redirect"


@dataclass(frozen=True)
class Passthrough:
    ip: str
    port: int
    metadata_reported: bool = False
    kind = "passthrough"


@dataclass(frozen=True)
class NoProxy:
    kind = "no-proxy"


ProxyDecision = Union[Redirect, Passthrough, NoProxy]


def decide(parsed: ParsedRequest, controller, source: tuple[str, int]) -> ProxyDecision:
    """Ask the controller where the requested content lives.

    ``source`` is the (ip, port) the upstream connection will originate from;
    it is what the controller needs to fork the response flow. Any controller
    failure falls back to the origin without reporting metadata.
    """
    if parsed.method != "GET":
        return NoProxy()
    origin = (parsed.original_dst_ip, parsed.original_dst_port)
    try:
        hit = controller.lookup_content(parsed.file_name)
    except Exception as exc:
        log.warning("controller lookup failed (%s); passing %r through", exc, parsed.file_name)
        return Passthrough(*origin)
    if hit is not None:
        return Redirect(hit[0], int(hit[1]))
    try:
        controller.report_metadata(parsed.file_name, origin[0], origin[1], source[0], source[1])
    except Exception as exc:
        log.warning("metadata report for %r failed: %s", parsed.file_name, exc)
        return Passthrough(*origin)
    return Passthrough(*origin, metadata_reported=True)
