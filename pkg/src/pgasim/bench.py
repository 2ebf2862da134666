"""
Bandwidth and latency microbenchmarks between two nodes.

Every measurement runs one operation on an otherwise idle runtime:

* PUT completes when the last payload byte is written at the target
  (its handler ends); its latency is the first packet arriving there.
* GET completes when the last reply byte lands at the initiator; its
  latency is the reply's first packet arriving back.

Times are simulated cycles converted with the link clock. Under the socket
transport the same operations run, but times are wall-clock seconds.
"""

import csv
import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean

from .addressing import GlobalAddress, MiB
from .api import Runtime, RuntimeConfig, start
from .core import PUT
from .errors import InvalidConfig

PACKET_SIZES = (128, 256, 512, 1024)
CSV_HEADER = ("op", "packet_size", "transfer_size", "bandwidth_mbs", "latency_us")


def transfer_sizes(lo: int = 4, hi: int = 2 * MiB) -> list[int]:
    """Powers of two from ``lo`` to ``hi`` inclusive."""
    sizes, n = [], lo
    while n <= hi:
        sizes.append(n)
        n *= 2
    return sizes


@dataclass(frozen=True, order=True)
class BenchRow:
    op: str
    packet_size: int
    transfer_size: int
    bandwidth_mbs: float
    latency_us: float

    def key(self):
        return (self.op, self.packet_size, self.transfer_size)


def _runtime(config: RuntimeConfig | None, packet_size: int, need: int) -> Runtime:
    config = config or RuntimeConfig()
    if config.nodes < 2:
        raise InvalidConfig("benchmarks need at least two nodes")
    core = dataclasses.replace(config.core, packet_size=packet_size)
    seg = config.segments
    if seg.shared_size < need:
        seg = dataclasses.replace(seg, shared_size=need)
    return start(config.replace(core=core, segments=seg, trace=True))


def measure(rt: Runtime, op: str, size: int, short: bool = False) -> tuple[float, float]:
    """Run one operation from node 0 against node 1.

    Returns ``(seconds to completion, seconds to first header arrival)``.
    """
    target = 1
    home = 0 if op == "get" else target
    mark = len(rt.sim.trace)
    t0 = rt.now
    wall = time.perf_counter()
    if op == "put":
        if short:
            rt.am_request_short(0, target, PUT)
        else:
            rt.put(0, GlobalAddress(target, 0), 0, size)
    elif op == "get":
        rt.get(0, GlobalAddress(target, 0), 0 if short else size, 0)
    else:
        raise ValueError(f"unknown op {op!r}")
    rt.run_until_idle()
    wall = time.perf_counter() - wall
    events = rt.sim.trace[mark:]
    ends = [e.time for e in events if e.kind == "handler_end" and e.node == home]
    heads = [e.time for e in events if e.kind == "pkt_arrive" and e.node == home]
    if not ends or not heads:
        raise RuntimeError(f"{op} of {size} bytes left no completion in the trace")
    if rt.config.transport == "socket":
        return wall, wall
    clock = rt.config.link.clock_hz
    return (ends[-1] - t0) / clock, (heads[0] - t0) / clock


def _row(op: str, packet: int, size: int, done_s: float, head_s: float) -> BenchRow:
    bw = size / done_s / 1e6 if done_s > 0 else 0.0
    return BenchRow(op, packet, size, bw, head_s * 1e6)


def bench_bandwidth(op: str, packet_sizes=PACKET_SIZES, sizes=None,
                    config: RuntimeConfig | None = None) -> list[BenchRow]:
    """Bandwidth sweep of ``op`` over packet and transfer sizes."""
    sizes = list(sizes or transfer_sizes())
    rows = []
    for packet in packet_sizes:
        with _runtime(config, packet, max(sizes)) as rt:
            for n in sizes:
                rows.append(_row(op, packet, n, *measure(rt, op, n)))
    return rows


def bench_latency(op: str, variant: str = "short", sizes=None, packet_size: int = 512,
                  config: RuntimeConfig | None = None) -> list[BenchRow]:
    """Header latency of ``op``: one zero-payload row, or one row per size for ``long``."""
    if variant not in ("short", "long"):
        raise ValueError(f"variant must be 'short' or 'long', got {variant!r}")
    sizes = [0] if variant == "short" else list(sizes or transfer_sizes())
    with _runtime(config, packet_size, max(sizes)) as rt:
        return [_row(op, packet_size, n, *measure(rt, op, n, short=variant == "short"))
                for n in sizes]


def latency_summary(config: RuntimeConfig | None = None, packet_size: int = 512,
                    sizes=None) -> dict[str, float]:
    """Short latencies and the unweighted mean long latencies, in microseconds."""
    out = {}
    for op in ("put", "get"):
        out[f"{op}_short"] = bench_latency(op, "short", packet_size=packet_size,
                                           config=config)[0].latency_us
        rows = bench_latency(op, "long", sizes, packet_size, config)
        out[f"{op}_long"] = fmean(r.latency_us for r in rows)
    return out


def half_max_size(rows: list[BenchRow]) -> int | None:
    """Smallest transfer size reaching half of the largest bandwidth in ``rows``."""
    rows = sorted(rows, key=BenchRow.key)
    peak = max(r.bandwidth_mbs for r in rows)
    return next((r.transfer_size for r in rows if r.bandwidth_mbs >= peak / 2), None)


def emit_csv(rows: list[BenchRow], path) -> Path:
    if not rows:
        raise ValueError("no benchmark rows to write")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in sorted(rows, key=BenchRow.key):
            writer.writerow([r.op, r.packet_size, r.transfer_size,
                             f"{r.bandwidth_mbs:.3f}", f"{r.latency_us:.4f}"])
    return path
