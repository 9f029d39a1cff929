"""Command-line interface.

    eagerfs SOURCE MOUNTPOINT [options]   mount SOURCE at MOUNTPOINT
    eagerfs bench [options]               run the benchmark harness

Exit statuses: 0 success, 1 deferred I/O failures were ledgered,
2 usage or mount error.
"""

from __future__ import annotations

import argparse
import signal
import sys
import threading

from . import bench, bridge
from .ops import MUTATION_KINDS, OpKind
from .policy import DEFAULT_MAX_PENDING, EagerPolicy

EXIT_OK = 0
EXIT_DEFERRED_FAILURES = 1
EXIT_USAGE_OR_MOUNT = 2


def _flag_name(kind: OpKind) -> str:
    return "--no-eager-" + kind.value


def _flag_dest(kind: OpKind) -> str:
    return "no_eager_" + kind.value.replace("-", "_")


def build_mount_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eagerfs",
        description="Mount a write-behind shim over SOURCE at MOUNTPOINT. "
                    "Mutations are acknowledged immediately and executed in "
                    "the background; failures are reported to stderr twice "
                    "and drive a nonzero exit status.")
    parser.add_argument("source", help="directory the shim forwards to")
    parser.add_argument("mountpoint",
                        help="empty directory, accessible only to this user")
    for kind in MUTATION_KINDS:
        parser.add_argument(_flag_name(kind), dest=_flag_dest(kind),
                            action="store_true",
                            help=f"execute {kind.value} synchronously")
    parser.add_argument("--no-mock-attr", action="store_true",
                        help="never synthesize attributes; always ask the "
                             "backing store")
    parser.add_argument("--max-pending", type=int,
                        default=DEFAULT_MAX_PENDING, metavar="N",
                        help="max simultaneously pending deferred ops "
                             f"(default {DEFAULT_MAX_PENDING})")
    parser.add_argument("--abort-on-error", action="store_true",
                        help="after the first deferred failure, fail all "
                             "new requests (pending ones still drain)")
    parser.add_argument("--stats", action="store_true",
                        help="print queue/ledger counters on teardown")
    parser.add_argument("--background", action="store_true",
                        help="let the mount daemonize instead of staying "
                             "in the foreground")
    return parser


def build_bench_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eagerfs bench",
        description="Time extract/remove/traverse workloads against a "
                    "latency-injected in-memory store in eager, direct and "
                    "staged modes.")
    parser.add_argument("--scenario", choices=bench.SCENARIOS,
                        default="extract")
    parser.add_argument("--mode", choices=bench.MODES + ("all",),
                        default="all")
    parser.add_argument("--files", type=int, default=1000)
    parser.add_argument("--fanout", type=int, default=16)
    parser.add_argument("--mean-size", type=int, default=36_000,
                        metavar="BYTES", help="lognormal mean file size")
    parser.add_argument("--symlink-fraction", type=float, default=0.0)
    parser.add_argument("--latency-ms", type=float, default=2.0,
                        help="injected metadata latency per op")
    parser.add_argument("--replicates", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-pending", type=int, default=4000,
                        help="throttle limit for the eager mode")
    parser.add_argument("--out", metavar="FILE",
                        help="also write the per-replicate rows as CSV")
    return parser


def parse(argv: list[str]) -> argparse.Namespace:
    if argv and argv[0] == "bench":
        args = build_bench_parser().parse_args(argv[1:])
        args.command = "bench"
    else:
        args = build_mount_parser().parse_args(argv)
        args.command = "mount"
    return args


def policy_from_args(args: argparse.Namespace) -> EagerPolicy:
    eager_off = frozenset(kind for kind in MUTATION_KINDS
                          if getattr(args, _flag_dest(kind)))
    return EagerPolicy(eager_off=eager_off,
                       mock_attr=not args.no_mock_attr,
                       max_pending=args.max_pending,
                       abort_on_error=args.abort_on_error)


def install_signal_handlers(mountpoint: str) -> None:
    """SIGINT/SIGTERM ask the host to unmount, which routes through the
    protocol's destroy hook and therefore drains before exiting."""

    def handler(signum, frame):
        threading.Thread(target=bridge.unmount, args=(mountpoint,),
                         daemon=True).start()

    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, handler)


def run_mount(args: argparse.Namespace) -> int:
    try:
        policy = policy_from_args(args)
        cfg = bridge.MountConfig(args.source, args.mountpoint, policy,
                                 foreground=not args.background)
        adapter = bridge.build_adapter(cfg)
    except (bridge.MountError, ValueError) as exc:
        print(f"eagerfs: {exc}", file=sys.stderr)
        return EXIT_USAGE_OR_MOUNT
    install_signal_handlers(args.mountpoint)
    try:
        bridge.mount(cfg, adapter)
    except bridge.MountError as exc:
        print(f"eagerfs: {exc}", file=sys.stderr)
        return EXIT_USAGE_OR_MOUNT
    if args.stats:
        for key, value in sorted(adapter.shim.stats().items()):
            print(f"eagerfs-stat {key}={value}", file=sys.stderr)
    return adapter.exit_status()


def run_bench(args: argparse.Namespace) -> int:
    workload = bench.Workload(files=args.files, fanout=args.fanout,
                              mean_size=args.mean_size,
                              symlink_fraction=args.symlink_fraction,
                              seed=args.seed)
    try:
        report = bench.run_scenario(args.scenario, args.mode,
                                    workload=workload,
                                    latency=args.latency_ms / 1000.0,
                                    replicates=args.replicates,
                                    max_pending=args.max_pending)
    except ValueError as exc:
        print(f"eagerfs: {exc}", file=sys.stderr)
        return EXIT_USAGE_OR_MOUNT
    sys.stdout.write(bench.emit_report(report, "table"))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(bench.emit_report(report, "csv"))
    return EXIT_OK if all(r.ok for r in report.rows) else EXIT_DEFERRED_FAILURES


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parse(argv)
    except SystemExit as exc:  # argparse usage errors already print help
        code = exc.code
        return code if isinstance(code, int) else EXIT_USAGE_OR_MOUNT
    if args.command == "bench":
        return run_bench(args)
    return run_mount(args)


if __name__ == "__main__":
    sys.exit(main())
