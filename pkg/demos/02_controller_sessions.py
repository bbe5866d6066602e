"""
Storage sessions and the content dictionaries
=============================================

Caches talk to the controller over a small JSON/HTTP API. This walk-through
starts the API on a loopback port, drives it with the bundled client and uses
a virtual clock to show a session expiring.
"""
from contentsdn.controller import (ContentMetadata, Controller, ControllerClient,
                                   ControllerConfig, ControllerServer)
from contentsdn.fabric import Fabric
from contentsdn.harness import default_scenario


class VirtualClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now


clock = VirtualClock()
ctl = Controller(Fabric(default_scenario().topology), "proxy", ControllerConfig(), clock=clock)
ctl.install_routing()

with ControllerServer(ctl) as server:
    client = ControllerClient(server.url)
    print("controller API at", server.url)

    # %%
    # A cache registers its capability and receives a session id.
    sid = client.register("10.0.1.1", 8080, 256 * 1024 * 1024)
    print("session", sid)

    # %%
    # The proxy reports a miss. The cache later claims the pending name for
    # the response it captured (exactly once) and confirms the store.
    client.report_metadata("clip.mp4", "10.0.2.1", 80, "10.0.0.2", 40000)
    print("pending claim:", client.pending("10.0.2.1"), "| second claim:",
          client.pending("10.0.2.1"))
    client.confirm(sid, "clip.mp4")
    print("lookup clip.mp4 ->", client.lookup_content("clip.mp4"))

    # %%
    # Heartbeats every 5 s keep the session alive. After three missed
    # intervals the session expires and its entries are purged.
    for t in (5, 10, 15):
        clock.now = t
        client.heartbeat(sid)
    client.report_stats(sid, 4096, 1)
    clock.now = 30.0
    print("at t=30 s, 15 s after the last heartbeat:", client.lookup_content("clip.mp4"))
    clock.now = 30.5
    print("at t=30.5 s:", client.lookup_content("clip.mp4"))
    print("session state:", client.admin_state()["sessions"][sid]["state"])

# %%
# The same operations are available in process, which is what the tests use.
ctl.report_metadata(ContentMetadata("x.bin", "10.0.2.1", 80, "10.0.0.2", 40001))
print("without a live cache nothing is recorded:", ctl.state()["request_dictionary"])
