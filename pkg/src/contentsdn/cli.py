"""Command line entry point: harness runs plus the three network services."""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import signal
import sys
import threading
from pathlib import Path

log = logging.getLogger("contentsdn")


def _setup_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper()),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _print_summary(report) -> None:
    agg = report.aggregates
    print(f"scenario {report.scenario}: {agg['succeeded']}/{agg['requests']} ok, "
          f"hits={agg['hits']} misses={agg['misses']} hit_ratio={agg['hit_ratio']:.2f}")
    if agg["mean_miss_latency_ms"] is not None:
        print(f"  mean simulated miss latency {agg['mean_miss_latency_ms']:.3f} ms")
    if agg["mean_hit_latency_ms"] is not None:
        print(f"  mean simulated hit latency  {agg['mean_hit_latency_ms']:.3f} ms")
    worst = max(agg["origin_requests"].values(), default=0)
    print(f"  max origin requests per file: {worst}")
    print(f"  trace digest {report.trace_digest[:16]}  ({report.injections} packets injected)")


def _run(scenario, out, csv_output) -> int:
    from .harness import ScenarioError, emit_report, run_scenario
    try:
        report = run_scenario(scenario)
        status = 0
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        report, status = exc.report, 1
    if report is not None:
        for path in emit_report(report, out, csv_output):
            print(f"wrote {path}")
        _print_summary(report)
    return status


def cmd_run(args) -> int:
    from .harness import ScenarioError, load_scenario
    try:
        scenario = load_scenario(args.scenario)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return _run(scenario, args.out, args.csv)


def cmd_validate(args) -> int:
    from .harness import ScenarioError, load_scenario
    try:
        sc = load_scenario(args.scenario)
    except (ScenarioError, OSError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print(f"ok: {sc.name}: {len(sc.topology.switches)} switches, {len(sc.topology.hosts)} hosts, "
          f"{len(sc.files)} files, {len(sc.requests)} requests")
    return 0


def cmd_demo(args) -> int:
    from .harness import default_scenario
    return _run(default_scenario(), args.out, args.csv)


def cmd_controller(args) -> int:
    from .controller import Controller, ControllerConfig, ControllerServer
    from .fabric import Fabric, load_topology

    config = ControllerConfig.load(args.config) if args.config else ControllerConfig()
    topology = load_topology(Path(args.topology).read_text())
    controller = Controller(Fabric(topology), args.proxy_host, config)
    controller.install_routing()
    controller.install_nat_rules(args.client_switch or topology.hosts[args.proxy_host])
    server = ControllerServer(controller, config.listen_host, config.listen_port)
    log.info("controller API on %s", server.url)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def _host_port(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    return host or "0.0.0.0", int(port)


def cmd_proxy(args) -> int:
    from .controller import ControllerClient
    from .proxy import ProxyServer

    host, port = _host_port(args.listen)
    server = ProxyServer(ControllerClient(args.controller_url), host, port,
                         index_name=args.index_name)
    try:
        asyncio.run(server.serve_forever())
    except KeyboardInterrupt:
        pass
    return 0


def cmd_cache(args) -> int:
    from .cache import CacheNode, CacheServer, ContentStore, read_replay
    from .controller import ControllerClient
    from .controller.config import ControllerConfig

    store = ContentStore(args.content_dir, args.capacity_bytes)
    node = CacheNode(args.ip, args.serve_port, store, ControllerClient(args.controller_url),
                     index_name=args.index_name)
    node.register()
    log.info("registered with controller as %s", node.session_id)
    if args.replay:
        for res in node.ingest_replay(read_replay(args.replay)):
            print(json.dumps({"flow": str(res.flow_key), "outcome": res.outcome,
                              "file_name": res.file_name}))
    server = CacheServer(node, args.bind, args.serve_port).start()
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())     # deregister on SIGTERM too
    interval = args.heartbeat_s or ControllerConfig().heartbeat_interval_s
    try:
        while not stop.wait(interval):
            node.heartbeat()
            node.purge_stale()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        try:
            node.deregister()
        except Exception as exc:
            log.warning("deregister failed: %s", exc)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contentsdn", description=__doc__)
    p.add_argument("--log-level", default="warning")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file and write its report")
    run.add_argument("--scenario", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--csv", action="store_true")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a scenario file without running it")
    val.add_argument("--scenario", required=True)
    val.set_defaults(func=cmd_validate)

    demo = sub.add_parser("demo", help="run the shipped 12-file hit/miss scenario")
    demo.add_argument("--out", default="demo-out")
    demo.add_argument("--csv", action="store_true")
    demo.set_defaults(func=cmd_demo)

    ctl = sub.add_parser("controller", help="serve the controller HTTP API")
    ctl.add_argument("--topology", required=True)
    ctl.add_argument("--proxy-host", required=True)
    ctl.add_argument("--client-switch")
    ctl.add_argument("--config")
    ctl.set_defaults(func=cmd_controller)

    px = sub.add_parser("proxy", help="run the transparent proxy")
    px.add_argument("--listen", default="0.0.0.0:3128")
    px.add_argument("--controller-url", required=True)
    px.add_argument("--index-name", default="index.html")
    px.set_defaults(func=cmd_proxy)

    cache = sub.add_parser("cache", help="run a cache element")
    cache.add_argument("--controller-url", required=True)
    cache.add_argument("--serve-port", type=int, default=8080)
    cache.add_argument("--capacity-bytes", type=int, default=1 << 30)
    cache.add_argument("--content-dir", required=True)
    cache.add_argument("--ip", default="127.0.0.1", help="address advertised to the controller")
    cache.add_argument("--bind", default="0.0.0.0")
    cache.add_argument("--index-name", default="index.html")
    cache.add_argument("--replay", help="capture replay file to ingest at startup")
    cache.add_argument("--heartbeat-s", type=float)
    cache.set_defaults(func=cmd_cache)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    # let --log-level appear after the subcommand too
    if "--log-level" in argv:
        i = argv.index("--log-level")
        if i + 1 < len(argv):
            argv = [argv[i], argv[i + 1]] + argv[:i] + argv[i + 2:]
    args = parser.parse_args(argv)
    _setup_logging(args.log_level)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
