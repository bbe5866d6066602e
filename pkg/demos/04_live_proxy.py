"""
The transparent proxy on real sockets
=====================================

Everything here runs on loopback: a controller API, a toy origin server, a
cache node with its HTTP server and the asyncio proxy. Loopback has no switch
fabric, so there is no forked copy. After the first fetch we hand the cache
the bytes the fork would have delivered.
"""
import asyncio
import random
import tempfile

from contentsdn.cache import CacheNode, CacheServer, ContentStore
from contentsdn.controller import Controller, ControllerClient, ControllerConfig, ControllerServer
from contentsdn.fabric import Fabric, FlowKey, load_topology
from contentsdn.httpmsg import parse_response
from contentsdn.proxy import ProxyServer

BODY = random.Random(3).randbytes(100_000)

# Linux routes all of 127/8 to loopback, so each role gets its own address
# and the controller can tell them apart.
TOPOLOGY = {
    "switches": ["s1", "s2"],
    "hosts": [{"id": "proxy", "switch": "s1", "ip": "127.0.0.1"},
              {"id": "cache", "switch": "s1", "ip": "127.0.0.4"},
              {"id": "origin", "switch": "s2", "ip": "127.0.0.2"}],
    "links": [{"a": "proxy", "b": "s1", "latency_ms": 0.1},
              {"a": "cache", "b": "s1", "latency_ms": 0.1},
              {"a": "origin", "b": "s2", "latency_ms": 0.1},
              {"a": "s1", "b": "s2", "latency_ms": 20}],
}


async def origin(reader, writer):
    await reader.readuntil(b"\r\n\r\n")
    writer.write(f"HTTP/1.1 200 OK\r\nContent-Length: {len(BODY)}\r\n\r\n".encode() + BODY)
    await writer.drain()
    writer.close()


async def fetch(proxy_addr, name):
    reader, writer = await asyncio.open_connection(*proxy_addr)
    writer.write(f"GET /{name} HTTP/1.1\r\nHost: origin.test\r\n\r\n".encode())
    data = await reader.read()
    writer.close()
    return parse_response(data)


async def main(ctl_url, node):
    origin_server = await asyncio.start_server(origin, "127.0.0.2", 0)
    origin_addr = origin_server.sockets[0].getsockname()[:2]
    # Normally the original destination comes from the NAT'd socket
    # (SO_ORIGINAL_DST); for the demo every connection "was going" to origin.
    proxy = ProxyServer(ControllerClient(ctl_url), "127.0.0.1", 0,
                        original_dst=lambda sock: origin_addr)
    await proxy.start()

    first = await fetch(proxy.address, "song.flac")
    print("first fetch:", first.status, len(first.body), "bytes")

    # What the fork would have delivered to the cache:
    node.resolve_and_store(FlowKey(*origin_addr, "127.0.0.1", 1), 200, BODY)
    print("controller now points song.flac at", ControllerClient(ctl_url).lookup_content("song.flac"))

    second = await fetch(proxy.address, "song.flac")
    print("second fetch:", second.status, "identical:", second.body == BODY)
    await proxy.stop()            # waits for the connection handlers to finish
    for s in proxy.summaries:
        print(f"  {s.decision:12s} up {s.bytes_up:6d} B  down {s.bytes_down:7d} B")
    origin_server.close()


ctl = Controller(Fabric(load_topology(TOPOLOGY)), "proxy", ControllerConfig())
with ControllerServer(ctl) as api, tempfile.TemporaryDirectory() as tmp:
    node = CacheNode("127.0.0.4", 0, ContentStore(tmp, 1 << 24), ControllerClient(api.url))
    with CacheServer(node, host="127.0.0.4") as cache_http:
        node.port = cache_http.address[1]
        node.register()
        asyncio.run(main(api.url, node))
