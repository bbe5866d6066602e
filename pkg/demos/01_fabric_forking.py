"""
Forking a flow inside the switch fabric
=======================================

The fabric is a deterministic model of OpenFlow-style switches. Here we let
the controller install shortest-path routing on the shipped three-switch line,
then ask it to fork one origin response towards the cache.
"""
from contentsdn.controller import ContentMetadata, Controller, ControllerConfig, StorageCapability
from contentsdn.fabric import Fabric, FlowKey, Packet
from contentsdn.harness import default_scenario

# The default scenario carries its topology: client and proxy on s1, the
# cache on s2 and the origin behind a slow 40 ms link on s3.
topology = default_scenario().topology
fabric = Fabric(topology)
print("origin -> proxy:", " -> ".join(fabric.shortest_path("origin", "proxy")),
      f"({float(fabric.distance('origin', 'proxy'))} ms)")

# %%
# Routing first: one destination rule per host on every switch.
ctl = Controller(fabric, "proxy", ControllerConfig())
ctl.install_routing()
for sw in topology.switches:
    first = fabric.rules(sw)[0]
    print(f"{sw}: {len(fabric.rules(sw))} rules, e.g. {first.match} => "
          + ",".join(map(str, first.actions)))

# %%
# A cache registers and the proxy reports a miss for ``movie.bin``. The
# controller picks the fork point: the switch on the origin->proxy path that
# is closest to the cache.
sid = ctl.register_storage(StorageCapability("10.0.1.1", 8080, 1 << 30,
                                             frozenset({"store", "serve"})))
ctl.report_metadata(ContentMetadata("movie.bin", "10.0.2.1", 80, "10.0.0.2", 40000))
print("fork point:", ctl.compute_fork_point("origin", "proxy", "cache"))

# %%
# One response packet now reaches both the proxy and the cache. The trace
# records every hop, and each delivery carries its own accumulated latency.
trace = fabric.inject_packet("origin", Packet(FlowKey("10.0.2.1", 80, "10.0.0.2", 40000),
                                              b"HTTP/1.1 200 OK\r\n", frozenset({"ACK"})))
print("hops:", trace.hops)
for d in trace.deliveries:
    print(f"  delivered to {d.host:6s} after {d.latency_ms} ms (forked copy: {d.packet.forked})")

# %%
# A different proxy-side port is a different flow, so it is not forked.
other = fabric.inject_packet("origin", Packet(FlowKey("10.0.2.1", 80, "10.0.0.2", 40001)))
print("unrelated flow reaches:", sorted(other.delivered_to))
