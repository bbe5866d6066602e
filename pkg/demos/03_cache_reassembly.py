"""
Rebuilding a captured response in the cache
============================================

The cache sees a forked copy of the origin's TCP segments: possibly out of
order and with retransmissions. It reassembles the stream, strips the HTTP
framing, asks the controller which file it is and stores it.
"""
import random
import tempfile

from contentsdn.cache import CacheNode, ContentStore, TcpSegment
from contentsdn.controller import (ContentMetadata, Controller, ControllerConfig,
                                   LocalControllerClient)
from contentsdn.fabric import Fabric, FlowKey
from contentsdn.harness import default_scenario
from contentsdn.httpmsg import build_response

body = random.Random(1).randbytes(200_000)
wire = build_response(200, body)
flow = FlowKey("10.0.2.1", 80, "10.0.0.2", 40000)

# %%
# Cut the response into 1460-byte segments after a SYN, then shuffle and
# duplicate some of them, like a lossy path with retransmissions would.
isn = 4_294_967_000                      # close to the 32-bit wrap on purpose
segments = [TcpSegment(flow, (isn + 1 + off) % (1 << 32), wire[off:off + 1460])
            for off in range(0, len(wire), 1460)]
last = segments[-1]
segments[-1] = TcpSegment(flow, last.seq, last.payload, fin=True)
rng = random.Random(7)
capture = segments + rng.sample(segments, 20)
rng.shuffle(capture)
capture.insert(0, TcpSegment(flow, isn, syn=True))
print(f"{len(capture)} segments captured ({len(capture) - len(segments) - 1} duplicates)")

# %%
# An in-process controller stands in for the HTTP one.
ctl = Controller(Fabric(default_scenario().topology), "proxy", ControllerConfig())
ctl.install_routing()
with tempfile.TemporaryDirectory() as tmp:
    node = CacheNode("10.0.1.1", 8080, ContentStore(tmp, 64 * 1024 * 1024),
                     LocalControllerClient(ctl))
    node.register()
    ctl.report_metadata(ContentMetadata("photo.raw", "10.0.2.1", 80, "10.0.0.2", 40000))

    for seg in capture:
        result = node.observe_segment(seg)
        if result is not None:
            print("ingest:", result.outcome, result.file_name, result.detail or "")
    status, served = node.serve("photo.raw")
    print("served", status, "identical:", served == body)
    print("controller now redirects photo.raw to", ctl.lookup_content("photo.raw"))
