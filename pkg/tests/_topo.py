"""Topology builders and brute-force oracles shared by the test modules.

The oracles deliberately avoid the package's own path code: they enumerate
simple paths with networkx and pick minima by hand.
"""
from __future__ import annotations

import random
from fractions import Fraction

import networkx as nx


def line_doc(latencies=(1, 1), host_latency=0.1):
    """s1 - s2 - s3 with client+proxy on s1, cache on s2, origin on s3."""
    return {
        "switches": ["s1", "s2", "s3"],
        "hosts": [
            {"id": "client", "switch": "s1", "ip": "10.0.0.1"},
            {"id": "proxy", "switch": "s1", "ip": "10.0.0.2"},
            {"id": "cache", "switch": "s2", "ip": "10.0.1.1"},
            {"id": "origin", "switch": "s3", "ip": "10.0.2.1"},
        ],
        "links": [
            {"a": "client", "b": "s1", "latency_ms": host_latency},
            {"a": "proxy", "b": "s1", "latency_ms": host_latency},
            {"a": "cache", "b": "s2", "latency_ms": host_latency},
            {"a": "origin", "b": "s3", "latency_ms": host_latency},
            {"a": "s1", "b": "s2", "latency_ms": latencies[0]},
            {"a": "s2", "b": "s3", "latency_ms": latencies[1]},
        ],
    }


def random_doc(rng: random.Random, max_nodes: int = 12, zero_latency: bool = True):
    """Random connected topology with hosts origin, proxy, cache (and a client).

    Total node count (switches + hosts) never exceeds ``max_nodes``. Integer
    latencies make equal-cost ties common, which is what the tie-break rules
    need exercising on.
    """
    n_sw = rng.randint(1, max_nodes - 4)
    switches = [f"s{i}" for i in range(n_sw)]
    lo = 0 if zero_latency else 1
    links = {}
    order = switches[:]
    rng.shuffle(order)
    for i in range(1, n_sw):          # random spanning tree keeps it connected
        a, b = order[i], order[rng.randrange(i)]
        links[frozenset((a, b))] = rng.randint(lo, 5)
    for _ in range(rng.randint(0, n_sw)):
        a, b = rng.sample(switches, 2) if n_sw > 1 else (None, None)
        if a is not None:
            links.setdefault(frozenset((a, b)), rng.randint(lo, 5))
    hosts = []
    for i, name in enumerate(("origin", "proxy", "cache", "client")):
        sw = rng.choice(switches)
        if name == "client":
            sw = next(h["switch"] for h in hosts if h["id"] == "proxy")
        hosts.append({"id": name, "switch": sw, "ip": f"10.9.{i}.1"})
        links[frozenset((name, sw))] = rng.randint(lo, 2)
    return {
        "switches": switches,
        "hosts": hosts,
        "links": [{"a": min(k), "b": max(k), "latency_ms": v} for k, v in sorted(
            links.items(), key=lambda kv: sorted(kv[0]))],
    }


def nx_graph(doc) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(doc["switches"])
    g.add_nodes_from(h["id"] for h in doc["hosts"])
    for link in doc["links"]:
        g.add_edge(link["a"], link["b"], w=Fraction(str(link["latency_ms"])))
    return g


def brute_shortest(g: nx.Graph, a, b):
    """(cost, path) minimizing cost, then the node sequence, over all simple paths."""
    if a == b:
        return Fraction(0), [a]
    best = None
    for path in nx.all_simple_paths(g, a, b):
        cost = sum((g[u][v]["w"] for u, v in zip(path, path[1:])), Fraction(0))
        cand = (cost, path)
        if best is None or cand < best:
            best = cand
    return best


def brute_fork_point(doc, origin, proxy, cache):
    g = nx_graph(doc)
    switches = set(doc["switches"])
    _, path = brute_shortest(g, origin, proxy)
    on_path = [n for n in path if n in switches]
    dists = [brute_shortest(g, s, cache)[0] for s in on_path]
    best = min(dists)
    return on_path[dists.index(best)]
