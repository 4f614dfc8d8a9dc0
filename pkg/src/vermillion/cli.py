"""Command-line entry point: run fleet components and benchmarks.

Long-running components: ``broker``, ``auth-backend``, ``gateway``, ``daemons``.
Benchmarks: ``run``, ``compare``, ``sweep``; each writes JSON, CSV and PNG
files under ``--out`` and prints a pipe-delimited table.
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

from .auth import AuthBackendServer, AuthStore, RemoteAuthStore, StoreAuthHook
from .auth.keys import DEFAULT_ITERATIONS
from .broker import BrokerClient, BrokerConfig, BrokerServer
from .broker.core import MiB
from .router import Router, RoutingMode, load_topology

SECRET_ENV = "VERMILLION_FLEET_SECRET"

log = logging.getLogger("vermillion")


def _secret(args) -> str:
    return args.secret if args.secret is not None else os.environ.get(SECRET_ENV, "")


def _wait_forever(stop_fn) -> None:
    done = threading.Event()

    def handler(signum, frame):
        done.set()

    signal.signal(signal.SIGTERM, handler)
    signal.signal(signal.SIGINT, handler)
    done.wait()
    stop_fn()


# -- components ---------------------------------------------------------------


def cmd_broker(args) -> int:
    registry, mode = load_topology(args.topology)
    me = registry.get(args.node_id)
    secret = _secret(args)
    config = BrokerConfig(
        node_id=me.node_id,
        host=me.host,
        port=me.port,
        mode=mode or RoutingMode.FEDERATED,
        peers=registry.nodes(),
        secret=secret,
        depth_limit=args.depth_limit,
        max_payload=args.max_payload,
        archive_limit=args.archive_limit,
        shovel_batch=args.shovel_batch,
    )
    hook = None
    if args.auth_url:
        hook = StoreAuthHook(RemoteAuthStore(args.auth_url, args.auth_secret or secret), ttl=args.auth_cache_ttl)
    server = BrokerServer(config, hook).start()
    _wait_forever(server.stop)
    return 0


def cmd_auth_backend(args) -> int:
    store = AuthStore(data_dir=args.data_dir, hash_iterations=args.hash_iterations)
    server = AuthBackendServer(store, args.host, args.port, _secret(args)).start()
    log.info("auth backend on %s", server.url)
    _wait_forever(server.stop)
    return 0


def _store(args):
    if args.auth_url:
        return RemoteAuthStore(args.auth_url, args.auth_secret or _secret(args))
    return AuthStore(data_dir=args.data_dir, hash_iterations=args.hash_iterations)


def cmd_gateway(args) -> int:
    from .gateway import Gateway, GatewayConfig, GatewayServer, server_ssl_context

    registry, mode = load_topology(args.topology)
    config = GatewayConfig(
        broker_secret=_secret(args),
        pooled=not args.no_pool,
        max_per_node=args.max_per_node,
        pool_timeout=args.pool_timeout,
        queue_depth=args.queue_depth,
    )
    gateway = Gateway(_store(args), Router(registry, args.mode or mode or RoutingMode.FEDERATED), config)
    ctx = server_ssl_context(args.tls_cert, args.tls_key) if args.tls_cert else None
    server = GatewayServer(gateway, args.host, args.port, ctx).start()
    log.info("gateway on %s (pool %s)", server.url, "on" if config.pooled else "off")
    _wait_forever(server.stop)
    return 0


def cmd_daemons(args) -> int:
    from .gateway import BindingManager, ChannelPool
    from .utility import Archiver, Periodic, UnbindDaemon

    registry, mode = load_topology(args.topology)
    secret = _secret(args)

    def connect(node):
        return BrokerClient(node.host, node.port, secret=secret, node_id=node.node_id)

    store = _store(args)
    tasks = []
    if args.archive_dir:
        archiver = Archiver(registry, args.archive_dir, connect)
        tasks.append(Periodic(archiver.tick, args.archive_period, "archiver"))
    pool = ChannelPool(connect, registry.get, max_per_node=4)
    daemon = UnbindDaemon(store, BindingManager(store, Router(registry, mode or RoutingMode.FEDERATED), pool))
    tasks.append(Periodic(daemon.tick, args.unbind_period, "unbind"))
    if args.once:
        for t in tasks:
            print(f"{t.name}|{t.tick()}")
        return 0
    for t in tasks:
        t.start()
    _wait_forever(lambda: [t.stop(final_tick=True) for t in tasks])
    return 0


# -- benchmarks ---------------------------------------------------------------


def _profile(args):
    from .loadgen import LoadProfile
    from .loadgen.model import FULL_SCALE_MESSAGES

    messages = args.messages
    if messages is None:
        messages = FULL_SCALE_MESSAGES if args.full_scale else 200
    return LoadProfile(
        producers=args.producers,
        messages_per_producer=messages,
        consumers=args.consumers,
        payload_bytes=args.payload_bytes,
        mode=args.mode or RoutingMode.FEDERATED,
        node_count=args.nodes,
        warmup=args.warmup,
        seed=args.seed,
        consumer_factor=args.consumer_factor,
        window=args.window,
        full_scale=args.full_scale,
    ).validate()


def _bench_kwargs(args) -> dict:
    from .gateway import GatewayConfig

    return {
        "subprocess": not args.in_process,
        "gateway_config": GatewayConfig(pooled=not args.no_pool, max_per_node=args.max_per_node),
    }


def _progress(report) -> None:
    print(report.summary(), file=sys.stderr, flush=True)


def cmd_run(args) -> int:
    from .loadgen import run_load
    from .loadgen.report import format_table, write_run

    report = run_load(_profile(args), label=args.label or "run", **_bench_kwargs(args))
    paths = write_run(args.out, args.label or "run", report)
    print(format_table([report]))
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_compare(args) -> int:
    from .loadgen import compare_modes
    from .loadgen.report import format_table, write_comparison

    result = compare_modes(_profile(args), pairs=args.pairs, progress=_progress, **_bench_kwargs(args))
    paths = write_comparison(args.out, args.label or "compare", result)
    print(format_table(result["reports"]))
    print("federated_median|clustered_median|ratio|federated_wins")
    print(f"{result['federated_median']:.2f}|{result['clustered_median']:.2f}|{result['ratio']:.3f}|"
          f"{result['federated_wins']}/{len(result['rows'])}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_sweep(args) -> int:
    from .loadgen import payload_sweep
    from .loadgen.report import format_table, write_sweep

    sizes = [int(s) for s in args.sizes.split(",")]
    reports = payload_sweep(_profile(args), sizes, repeats=args.repeats, progress=_progress, **_bench_kwargs(args))
    paths = write_sweep(args.out, args.label or "sweep", reports)
    print(format_table(reports))
    for p in paths:
        print(f"wrote {p}")
    return 0


# -- parser -------------------------------------------------------------------


def _add_auth_args(p) -> None:
    p.add_argument("--auth-url", help="auth backend URL; without it an embedded store is used")
    p.add_argument("--auth-secret", help="auth backend secret (defaults to --secret)")
    p.add_argument("--data-dir", help="embedded store snapshot directory")
    p.add_argument("--hash-iterations", type=int, default=DEFAULT_ITERATIONS)


def _add_profile_args(p) -> None:
    p.add_argument("-P", "--producers", type=int, default=1)
    p.add_argument("-M", "--messages", type=int, help="messages per producer (default 200, full scale 10000)")
    p.add_argument("-C", "--consumers", type=int, default=0)
    p.add_argument("--payload-bytes", type=int, default=220)
    p.add_argument("--mode", type=RoutingMode.parse)
    p.add_argument("--nodes", type=int, default=1)
    p.add_argument("--warmup", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--consumer-factor", type=int, default=1)
    p.add_argument("--window", type=float, default=1.0)
    p.add_argument("--full-scale", action="store_true", help="lift the desk-scale limits (P<=64, M<=1000)")
    p.add_argument("--in-process", action="store_true", help="run the fleet as threads instead of processes")
    p.add_argument("--no-pool", action="store_true", help="open a fresh broker channel per request")
    p.add_argument("--max-per-node", type=int, default=16)
    p.add_argument("--out", type=Path, default=Path("reports"))
    p.add_argument("--label")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vermillion", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("broker", help="run one broker node from a topology file")
    p.add_argument("--node-id", required=True)
    p.add_argument("--topology", required=True)
    p.add_argument("--secret", help=f"fleet secret (or ${SECRET_ENV})")
    p.add_argument("--auth-url")
    p.add_argument("--auth-secret")
    p.add_argument("--auth-cache-ttl", type=float, default=5.0)
    p.add_argument("--depth-limit", type=int, default=10_000)
    p.add_argument("--max-payload", type=int, default=MiB)
    p.add_argument("--archive-limit", type=int, default=1_000_000)
    p.add_argument("--shovel-batch", type=int, default=100)
    p.set_defaults(func=cmd_broker)

    p = sub.add_parser("auth-backend", help="serve the auth store over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--secret")
    p.add_argument("--data-dir")
    p.add_argument("--hash-iterations", type=int, default=DEFAULT_ITERATIONS)
    p.set_defaults(func=cmd_auth_backend)

    p = sub.add_parser("gateway", help="serve the REST API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--topology", required=True)
    p.add_argument("--mode", type=RoutingMode.parse, help="override the topology file's mode")
    p.add_argument("--secret", help="broker fleet secret")
    _add_auth_args(p)
    p.add_argument("--no-pool", action="store_true")
    p.add_argument("--max-per-node", type=int, default=16)
    p.add_argument("--pool-timeout", type=float, default=5.0)
    p.add_argument("--queue-depth", type=int)
    p.add_argument("--tls-cert", help="PEM certificate; enables HTTPS")
    p.add_argument("--tls-key")
    p.set_defaults(func=cmd_gateway)

    p = sub.add_parser("daemons", help="run the archiver and unbind daemon")
    p.add_argument("--topology", required=True)
    p.add_argument("--secret")
    _add_auth_args(p)
    p.add_argument("--archive-dir")
    p.add_argument("--archive-period", type=float, default=1.0)
    p.add_argument("--unbind-period", type=float, default=5.0)
    p.add_argument("--once", action="store_true", help="run one tick of each and exit")
    p.set_defaults(func=cmd_daemons)

    for name, func, text in (
        ("run", cmd_run, "run one load profile"),
        ("compare", cmd_compare, "federated vs clustered, paired runs"),
        ("sweep", cmd_sweep, "throughput across payload sizes"),
    ):
        p = sub.add_parser(name, help=text)
        _add_profile_args(p)
        p.set_defaults(func=func)
        if name == "compare":
            p.add_argument("--pairs", type=int, default=5)
            p.set_defaults(nodes=4)
        if name == "sweep":
            p.add_argument("--sizes", default="220,10240")
            p.add_argument("--repeats", type=int, default=1)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
