"""
The two-pass experiment end to end
==================================

Twelve files from 2 KiB to 6 MiB are each fetched twice through the proxy.
The first fetch comes from the origin while the fabric forks a copy to the
cache. The second is redirected to the cache. Latencies are simulated link
time, so they are the same on every machine.
"""
import sys

from contentsdn.harness import default_scenario, emit_report, run_scenario

report = run_scenario(default_scenario())

print(f"{'file':12s} {'size':>9s} {'1st from':>9s} {'1st ms':>8s} {'2nd from':>9s} {'2nd ms':>8s}")
for name, (first, second) in report.by_file().items():
    print(f"{name:12s} {first.bytes:9d} {first.served_by:>9s} {first.latency_ms:8.1f} "
          f"{second.served_by:>9s} {second.latency_ms:8.1f}")

agg = report.aggregates
print(f"\nmean miss {agg['mean_miss_latency_ms']} ms, mean hit {agg['mean_hit_latency_ms']} ms")
print("origin requests per file:", set(agg["origin_requests"].values()))

# %%
# Write the JSON report (and a CSV) if an output directory was given.
if len(sys.argv) > 1:
    for path in emit_report(report, sys.argv[1], csv_output=True):
        print("wrote", path)
