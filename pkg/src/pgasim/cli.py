"""Command-line entry point: ``pgasim bench {bw,lat}`` and ``pgasim app {matmul,conv}``."""

import argparse
import csv
import dataclasses
import logging
import sys

from .api import RuntimeConfig
from .bench import (PACKET_SIZES, BenchRow, bench_bandwidth, bench_latency, emit_csv,
                    transfer_sizes)
from .errors import PgasError
from .workloads import CONV_PRESETS, MATMUL_SIZES, CaseReport, conv_case, matmul_case

logger = logging.getLogger("pgasim")


class InvariantViolation(Exception):
    pass


class InvalidUsage(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON runtime configuration file")
    common.add_argument("--packet-size", type=int, help="packet size in bytes")
    common.add_argument("--nodes", type=int, help="number of nodes")
    common.add_argument("--out", help="CSV output path")
    common.add_argument("--transport", choices=("sim", "socket"))

    p = argparse.ArgumentParser(prog="pgasim", description="PGAS accelerator cluster simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="group", required=True)

    bench = sub.add_parser("bench", help="communication microbenchmarks")
    bsub = bench.add_subparsers(dest="what", required=True)
    bw = bsub.add_parser("bw", parents=[common], help="bandwidth sweep")
    bw.add_argument("--op", choices=("put", "get", "both"), default="both")
    lat = bsub.add_parser("lat", parents=[common], help="latency table")
    lat.add_argument("--op", choices=("put", "get", "both"), default="both")

    app = sub.add_parser("app", help="two-node case studies")
    asub = app.add_subparsers(dest="what", required=True)
    mm = asub.add_parser("matmul", parents=[common], help="distributed matrix multiply")
    mm.add_argument("--size", type=int, choices=MATMUL_SIZES, required=True)
    mm.add_argument("--no-art", action="store_true", help="exchange with one PUT after compute")
    cv = asub.add_parser("conv", parents=[common], help="kernel-split convolution")
    cv.add_argument("--preset", choices=sorted(CONV_PRESETS), required=True)
    return p


def _config(args) -> RuntimeConfig:
    config = RuntimeConfig.from_json(args.config) if args.config else RuntimeConfig()
    changes = {}
    if args.nodes is not None:
        changes["nodes"] = args.nodes
    if args.transport is not None:
        changes["transport"] = args.transport
    return config.replace(**changes) if changes else config


def _ops(args) -> list[str]:
    return ["put", "get"] if args.op == "both" else [args.op]


def _check_rows(rows: list[BenchRow], config: RuntimeConfig) -> None:
    if config.transport != "sim":
        return
    peak = config.link.peak_bytes_per_s / 1e6
    for r in rows:
        if r.bandwidth_mbs > peak:
            raise InvariantViolation(f"{r.op} {r.transfer_size} B reports {r.bandwidth_mbs:.1f} "
                                     f"MB/s above the {peak:.0f} MB/s link peak")


def _print_rows(rows: list[BenchRow], unit: str) -> None:
    print(f"{'op':<4} {'packet':>6} {'bytes':>8} {'MB/s':>9} {'latency us':>11}")
    for r in sorted(rows, key=BenchRow.key):
        print(f"{r.op:<4} {r.packet_size:>6} {r.transfer_size:>8} "
              f"{r.bandwidth_mbs:>9.1f} {r.latency_us:>11.4f}")
    print(f"({unit})")


def _run_bench(args) -> None:
    config = _config(args)
    if args.what == "bw":
        packets = [args.packet_size] if args.packet_size else list(PACKET_SIZES)
        rows = [r for op in _ops(args) for r in bench_bandwidth(op, packets, config=config)]
    else:
        packet = args.packet_size or config.core.packet_size
        rows = []
        for op in _ops(args):
            rows += bench_latency(op, "short", packet_size=packet, config=config)
            rows += bench_latency(op, "long", transfer_sizes(), packet, config)
    _check_rows(rows, config)
    unit = "wall-clock" if config.transport == "socket" else "simulated time"
    _print_rows(rows, unit)
    if args.out:
        emit_csv(rows, args.out)
        print(f"wrote {len(rows)} rows to {args.out}")


def _report(rep: CaseReport) -> None:
    print(f"{rep.name}: {rep.macs} MACs")
    print(f"  1-node  {rep.single_cycles:>10} cycles  {rep.single_gops:8.1f} GOPS")
    print(f"  2-node  {rep.parallel_cycles:>10} cycles  {rep.parallel_gops:8.1f} GOPS")
    print(f"  speedup {rep.speedup:.4f}  exact={rep.exact}  node-invariant={rep.node_invariant}")
    print(f"  exchanged {rep.exchanged_bytes} bytes per node in {rep.art_puts} streamed messages")


def _run_app(args) -> None:
    config = _config(args)
    if config.nodes != 2:
        raise InvalidUsage("case studies run on exactly two nodes")
    if args.packet_size:
        config = config.replace(core=dataclasses.replace(config.core,
                                                         packet_size=args.packet_size))
    if args.what == "matmul":
        rep = matmul_case(args.size, config, art=not args.no_art)
    else:
        rep = conv_case(args.preset, config)
    _report(rep)
    if not (rep.exact and rep.node_invariant):
        raise InvariantViolation("distributed result differs from the serial oracle")
    if rep.parallel_cycles * 2 < rep.single_cycles:
        raise InvariantViolation("superlinear speedup")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["case", "macs", "single_cycles", "parallel_cycles", "single_gops",
                        "parallel_gops", "speedup"])
            w.writerow([rep.name, rep.macs, rep.single_cycles, rep.parallel_cycles,
                        f"{rep.single_gops:.3f}", f"{rep.parallel_gops:.3f}",
                        f"{rep.speedup:.6f}"])


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.packet_size is not None and args.packet_size < 96:
            raise InvalidUsage("--packet-size must be at least 96 bytes")
        if args.group == "bench":
            _run_bench(args)
        else:
            _run_app(args)
    except InvalidUsage as exc:
        parser.error(str(exc))
    except (PgasError, InvariantViolation, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
