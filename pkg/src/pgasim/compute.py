"""
Systolic-array accelerator model with automatic result transfer (ART).

The accelerator performs ``pe_rows * pe_cols * macs_per_pe_per_cycle``
multiply-accumulates per cycle, so a command of ``M`` MACs costs
``ceil(M / macs_per_cycle) + drain_overhead_cycles``. Results become valid
at a uniform rate across that window. Numerics are exact integer
arithmetic and do not depend on any timing parameter.

With ART configured, the engine enqueues one PUT into the core's compute
queue each time ``every_n_results`` further results become valid, with the
final partial chunk flushed at the end.
"""

import collections
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .addressing import GlobalAddress
from .core import PUT, USER_OPCODE_MIN, Command, CommandKind, GasnetCore
from .errors import BadCommand, BadDims, NumericOverflow, OutOfBounds
from .memory import COMPUTE_ACK_OFFSET, NodeMemory, Region
from .wire import Variant, split_u64

DTYPES = {1: np.dtype("<i2"), 2: np.dtype("<i4"), 3: np.dtype("<i8")}
_DTYPE_CODES = {v: k for k, v in DTYPES.items()}

_FLOAT_EXACT = 2**53


@dataclass(frozen=True)
class DlaConfig:
    pe_rows: int = 16
    pe_cols: int = 8
    macs_per_pe_per_cycle: int = 16
    clock_hz: float = 250e6
    drain_overhead_cycles: int = 512

    @property
    def macs_per_cycle(self) -> int:
        return self.pe_rows * self.pe_cols * self.macs_per_pe_per_cycle

    @property
    def peak_gops(self) -> float:
        return self.macs_per_cycle * 2 * self.clock_hz / 1e9

    def cycles_for_macs(self, macs: int) -> int:
        return -(-macs // self.macs_per_cycle) + self.drain_overhead_cycles

    def gops(self, macs: int, cycles: int) -> float:
        return 2 * macs / (cycles / self.clock_hz) / 1e9


@dataclass(frozen=True)
class ArtConfig:
    every_n_results: int
    dest: GlobalAddress
    element_size: int
    opcode: int = PUT

    def __post_init__(self):
        if self.every_n_results <= 0:
            raise BadCommand("ART needs every_n_results > 0")
        if self.opcode != PUT and self.opcode < USER_OPCODE_MIN:
            raise BadCommand(f"ART opcode {self.opcode:#04x} must be PUT or a user opcode")


def _dt(dtype) -> np.dtype:
    d = np.dtype(dtype).newbyteorder("<")
    if d not in _DTYPE_CODES:
        raise BadCommand(f"unsupported element type {dtype}")
    return d


@dataclass(frozen=True)
class MatMul:
    """``C (m x n) = A (m x k) @ B (k x n)``, all row-major in the shared segment."""

    m: int
    k: int
    n: int
    a_offset: int
    b_offset: int
    c_offset: int
    dtype: str = "int32"
    accumulate: bool = False
    art: ArtConfig | None = None

    @property
    def macs(self) -> int:
        return self.m * self.k * self.n

    @property
    def results(self) -> int:
        return self.m * self.n


@dataclass(frozen=True)
class Conv2d:
    """Stride-1 convolution.

    Input is ``c_in x h x w``, weights ``k x c_in x r x s``, output
    ``k x h_out x w_out``. ``padding=None`` means same padding.
    """

    c_in: int
    h: int
    w: int
    k: int
    r: int
    s: int
    in_offset: int
    w_offset: int
    out_offset: int
    padding: int | None = None
    dtype: str = "int32"
    art: ArtConfig | None = None

    @property
    def pad(self) -> int:
        return (self.r - 1) // 2 if self.padding is None else self.padding

    @property
    def h_out(self) -> int:
        return self.h + 2 * self.pad - self.r + 1

    @property
    def w_out(self) -> int:
        return self.w + 2 * self.pad - self.s + 1

    @property
    def macs(self) -> int:
        return self.k * self.c_in * self.r * self.s * self.h_out * self.w_out

    @property
    def results(self) -> int:
        return self.k * self.h_out * self.w_out


@dataclass(frozen=True)
class Accumulate:
    """``dst[i] += src[i]`` for ``count`` elements."""

    src_offset: int
    dst_offset: int
    count: int
    dtype: str = "int32"
    art: ArtConfig | None = None

    @property
    def macs(self) -> int:
        return self.count

    @property
    def results(self) -> int:
        return self.count


ComputeCommand = MatMul | Conv2d | Accumulate

_KIND_CODES = {MatMul: 1, Conv2d: 2, Accumulate: 3}
_FIELDS = {
    MatMul: ("m", "k", "n", "a_offset", "b_offset", "c_offset"),
    Conv2d: ("c_in", "h", "w", "k", "r", "s", "padding", "in_offset", "w_offset", "out_offset"),
    Accumulate: ("src_offset", "dst_offset", "count"),
}
_NO_PAD = 0xFFFFFFFF


def to_args(cmd: ComputeCommand) -> tuple:
    """Pack a compute command into COMPUTE message arguments (u32 each)."""
    cls = type(cmd)
    flags = int(getattr(cmd, "accumulate", False)) | (int(cmd.art is not None) << 1)
    head = _KIND_CODES[cls] | (_DTYPE_CODES[_dt(cmd.dtype)] << 8) | (flags << 16)
    vals = []
    for name in _FIELDS[cls]:
        v = getattr(cmd, name)
        vals.append(_NO_PAD if v is None else v)
    if cmd.art is not None:
        a = cmd.art
        vals += [a.every_n_results, a.dest.node | (a.opcode << 16), a.dest.offset]
    args = (head, *vals)
    if any(not 0 <= v < 2**32 for v in args):
        raise BadCommand("compute command fields must fit in 32 bits to travel as arguments")
    return args


def from_args(args) -> ComputeCommand:
    head = args[0]
    cls = {v: k for k, v in _KIND_CODES.items()}.get(head & 0xFF)
    if cls is None:
        raise BadCommand(f"unknown compute kind {head & 0xFF}")
    dtype = DTYPES[(head >> 8) & 0xFF]
    flags = head >> 16
    names = _FIELDS[cls]
    vals = dict(zip(names, args[1:1 + len(names)]))
    if cls is Conv2d and vals["padding"] == _NO_PAD:
        vals["padding"] = None
    art = None
    if flags & 2:
        n, node_op, off = args[1 + len(names):4 + len(names)]
        art = ArtConfig(n, GlobalAddress(node_op & 0xFFFF, off), dtype.itemsize, node_op >> 16)
    if cls is MatMul:
        vals["accumulate"] = bool(flags & 1)
    return cls(**vals, dtype=dtype.name, art=art)


# -- numerics ---------------------------------------------------------------

def _maxabs(x: np.ndarray) -> int:
    return int(np.abs(x.astype(np.int64)).max()) if x.size else 0


def matmul_exact(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Integer matrix product as int64.

    Uses float64 BLAS when every partial sum is an integer below 2**53 (then
    the float result is exact); otherwise falls back to int64 arithmetic.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0] or 0 in a.shape + b.shape:
        raise BadDims(f"cannot multiply {a.shape} by {b.shape}")
    if _maxabs(a) * _maxabs(b) * a.shape[1] < _FLOAT_EXACT:
        return np.rint(a.astype(np.float64) @ b.astype(np.float64)).astype(np.int64)
    return a.astype(np.int64) @ b.astype(np.int64)


def conv2d_exact(x: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    """Stride-1 cross-correlation of ``x`` (C,H,W) with ``w`` (K,C,R,S), int64 result."""
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise BadDims(f"incompatible conv shapes {x.shape} and {w.shape}")
    c, h, wd = x.shape
    k, _, r, s = w.shape
    ho, wo = h + 2 * pad - r + 1, wd + 2 * pad - s + 1
    if min(c, h, wd, k, r, s, ho, wo) <= 0 or pad < 0:
        raise BadDims(f"empty convolution: input {x.shape}, kernels {w.shape}, pad {pad}")
    exact_float = _maxabs(x) * _maxabs(w) * c * r * s < _FLOAT_EXACT
    acc_t = np.float64 if exact_float else np.int64
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad), dtype=acc_t)
    xp[:, pad:pad + h, pad:pad + wd] = x
    # tap-major weights: strided operands would bypass BLAS
    wt = np.ascontiguousarray(w.astype(acc_t).transpose(2, 3, 0, 1))
    out = np.zeros((k, ho * wo), dtype=acc_t)
    for i in range(r):
        for j in range(s):
            patch = xp[:, i:i + ho, j:j + wo].reshape(c, -1)
            out += wt[i, j] @ patch
    if exact_float:
        out = np.rint(out).astype(np.int64)
    return out.reshape(k, ho, wo)


def _fit(values: np.ndarray, dtype: np.dtype) -> np.ndarray:
    info = np.iinfo(dtype)
    if values.size and (values.min() < info.min or values.max() > info.max):
        raise NumericOverflow(f"result range [{values.min()}, {values.max()}] exceeds {dtype}")
    return values.astype(dtype)


def _read(mem: NodeMemory, offset: int, count: int, dtype) -> np.ndarray:
    return mem.view(Region.SHARED, offset, count, dtype).copy()


def output_span(cmd: ComputeCommand) -> tuple[int, int]:
    """(offset, byte length) of the command's output in the shared segment."""
    size = _dt(cmd.dtype).itemsize
    if isinstance(cmd, MatMul):
        return cmd.c_offset, cmd.results * size
    if isinstance(cmd, Conv2d):
        return cmd.out_offset, cmd.results * size
    return cmd.dst_offset, cmd.results * size


def validate(cmd: ComputeCommand, mem: NodeMemory | None = None) -> None:
    dtype = _dt(cmd.dtype)
    if isinstance(cmd, MatMul):
        dims = (cmd.m, cmd.k, cmd.n)
        spans = [(cmd.a_offset, cmd.m * cmd.k), (cmd.b_offset, cmd.k * cmd.n),
                 (cmd.c_offset, cmd.m * cmd.n)]
    elif isinstance(cmd, Conv2d):
        dims = (cmd.c_in, cmd.h, cmd.w, cmd.k, cmd.r, cmd.s, cmd.h_out, cmd.w_out)
        if cmd.pad < 0:
            raise BadDims("negative padding")
        spans = [(cmd.in_offset, cmd.c_in * cmd.h * cmd.w),
                 (cmd.w_offset, cmd.k * cmd.c_in * cmd.r * cmd.s),
                 (cmd.out_offset, cmd.results)]
    elif isinstance(cmd, Accumulate):
        dims = (cmd.count,)
        spans = [(cmd.src_offset, cmd.count), (cmd.dst_offset, cmd.count)]
    else:
        raise BadCommand(f"not a compute command: {cmd!r}")
    if min(dims) <= 0:
        raise BadDims(f"all dimensions must be positive: {dims}")
    if cmd.art is not None and cmd.art.element_size != dtype.itemsize:
        raise BadCommand(f"ART element_size {cmd.art.element_size} != {dtype.itemsize}")
    if mem is not None:
        limit = mem.layout.shared_size
        for off, count in spans:
            if off < 0 or off + count * dtype.itemsize > limit:
                raise OutOfBounds(
                    f"operand [{off}, {off + count * dtype.itemsize}) exceeds the "
                    f"{limit}-byte shared segment")


def compute_cycles(cmd: ComputeCommand, config: DlaConfig) -> int:
    if isinstance(cmd, Accumulate):
        # vector add streams one element per PE per cycle
        return -(-cmd.count // (config.pe_rows * config.pe_cols)) + config.drain_overhead_cycles
    return config.cycles_for_macs(cmd.macs)


def evaluate(cmd: ComputeCommand, mem: NodeMemory) -> np.ndarray:
    """Fresh (non-accumulated) results of ``cmd`` as a flat int64 array."""
    dt = _dt(cmd.dtype)
    if isinstance(cmd, MatMul):
        a = _read(mem, cmd.a_offset, cmd.m * cmd.k, dt).reshape(cmd.m, cmd.k)
        b = _read(mem, cmd.b_offset, cmd.k * cmd.n, dt).reshape(cmd.k, cmd.n)
        return matmul_exact(a, b).reshape(-1)
    if isinstance(cmd, Conv2d):
        x = _read(mem, cmd.in_offset, cmd.c_in * cmd.h * cmd.w, dt).reshape(cmd.c_in, cmd.h, cmd.w)
        w = _read(mem, cmd.w_offset, cmd.k * cmd.c_in * cmd.r * cmd.s, dt).reshape(
            cmd.k, cmd.c_in, cmd.r, cmd.s)
        return conv2d_exact(x, w, cmd.pad).reshape(-1)
    src = _read(mem, cmd.src_offset, cmd.count, dt).astype(np.int64)
    return src + _read(mem, cmd.dst_offset, cmd.count, dt).astype(np.int64)


def _accumulates(cmd: ComputeCommand) -> bool:
    return isinstance(cmd, MatMul) and cmd.accumulate


def run_matmul(cmd: MatMul, mem: NodeMemory, config: DlaConfig = DlaConfig()) -> int:
    """Execute ``cmd`` against ``mem`` immediately; returns its cycle cost."""
    validate(cmd, mem)
    return _execute_now(cmd, mem, config)


def run_conv2d(cmd: Conv2d, mem: NodeMemory, config: DlaConfig = DlaConfig()) -> int:
    validate(cmd, mem)
    return _execute_now(cmd, mem, config)


def _execute_now(cmd, mem, config) -> int:
    dt = _dt(cmd.dtype)
    values = evaluate(cmd, mem)
    off, _ = output_span(cmd)
    if _accumulates(cmd):
        values = values + _read(mem, off, cmd.results, dt).astype(np.int64)
    mem.dma_write(Region.SHARED, off, _fit(values, dt))
    return compute_cycles(cmd, config)


# -- ART --------------------------------------------------------------------

@dataclass(frozen=True)
class ArtChunk:
    index: int
    first: int
    count: int
    emit_time: int


def art_chunks(total_results: int, every_n: int) -> list[tuple[int, int]]:
    """``(first_result, count)`` of every chunk: full ones, then the remainder."""
    if every_n <= 0:
        raise BadCommand("every_n must be > 0")
    return [(i, min(every_n, total_results - i)) for i in range(0, total_results, every_n)]


def art_schedule(total_results: int, every_n: int, start: int, cycles: int) -> list[ArtChunk]:
    """Chunks with the time their last result becomes valid.

    Result ``i`` (1-based) is valid at ``start + ceil(cycles * i / total)``.
    """
    out = []
    for idx, (first, count) in enumerate(art_chunks(total_results, every_n)):
        last = first + count
        out.append(ArtChunk(idx, first, count, start + -(-cycles * last // total_results)))
    return out


@dataclass
class _Job:
    handle: int
    cmd: ComputeCommand
    start: int = 0
    end: int = 0
    values: np.ndarray | None = None
    finished: bool = False
    art_outstanding: int = 0
    art_bytes: int = 0
    art_puts: int = 0
    on_done: list = field(default_factory=list)


class ComputeEngine:
    """FIFO compute command scheduler plus accelerator for one node."""

    def __init__(self, core: GasnetCore, config: DlaConfig | None = None):
        self.core = core
        self.sim = core.sim
        self.memory = core.memory
        self.config = config or DlaConfig()
        self.queue: collections.deque[_Job] = collections.deque()
        self.busy = False
        self.free_at = 0
        self.done: dict[int, int] = {}
        self.jobs: dict[int, _Job] = {}
        self._handles = itertools.count()
        self._acks = itertools.count(1)
        core.compute_sink = self._from_message

    def _from_message(self, args, header) -> None:
        self.enqueue_compute(from_args(args))

    def enqueue_compute(self, cmd: ComputeCommand,
                        on_done: Callable[[int], None] | None = None) -> int:
        validate(cmd, self.memory)
        if cmd.art is not None and cmd.art.opcode != PUT:
            chunk = cmd.art.every_n_results * cmd.art.element_size
            if chunk > self.memory.scratch_size:
                raise BadCommand(f"ART chunk of {chunk} bytes exceeds the medium scratch ring")
        job = _Job(next(self._handles), cmd)
        if on_done is not None:
            job.on_done.append(on_done)
        self.jobs[job.handle] = job
        self.queue.append(job)
        self.sim.record(self.core.node_id, "compute_enqueue", job.handle, type(cmd).__name__)
        if not self.busy:
            self.busy = True
            self.sim.at(max(self.sim.now, self.free_at), self._start_next)
        return job.handle

    def _start_next(self) -> None:
        if not self.queue:
            self.busy = False
            return
        job = self.queue.popleft()
        cmd = job.cmd
        cycles = compute_cycles(cmd, self.config)
        job.start, job.end = self.sim.now, self.sim.now + cycles
        values = evaluate(cmd, self.memory)
        if cmd.art is not None and _accumulates(cmd):
            off, _ = output_span(cmd)
            values = values + _read(self.memory, off, cmd.results, _dt(cmd.dtype)).astype(np.int64)
        job.values = values
        self.sim.record(self.core.node_id, "compute_start", job.handle, cycles)
        if cmd.art is not None:
            for chunk in art_schedule(cmd.results, cmd.art.every_n_results, job.start, cycles):
                job.art_outstanding += 1
                self.sim.at(chunk.emit_time, self._emit, job, chunk)
        self.free_at = job.end
        self.sim.at(job.end, self._finish, job)

    def _emit(self, job: _Job, chunk: ArtChunk) -> None:
        cmd, art = job.cmd, job.cmd.art
        dt = _dt(cmd.dtype)
        off, _ = output_span(cmd)
        src = off + chunk.first * dt.itemsize
        nbytes = chunk.count * dt.itemsize
        self.memory.dma_write(Region.SHARED, src,
                              _fit(job.values[chunk.first:chunk.first + chunk.count], dt))
        dest = art.dest.offset + chunk.first * dt.itemsize
        if art.opcode == PUT:
            put = Command(CommandKind.PUT, art.dest.node, source=(Region.SHARED, src, nbytes),
                          dest_offset=dest)
        else:
            put = Command(CommandKind.AM_REQUEST, art.dest.node, art.opcode, Variant.MEDIUM,
                          (*split_u64(dest), _DTYPE_CODES[dt]),
                          source=(Region.SHARED, src, nbytes))
        put.on_done = lambda t, job=job: self._art_injected(job)
        job.art_bytes += nbytes
        job.art_puts += 1
        self.sim.record(self.core.node_id, "art_emit", job.handle, chunk.index, chunk.first,
                        chunk.count, nbytes, art.dest.node, dest)
        self.core.submit_command(put, source="compute")

    def _art_injected(self, job: _Job) -> None:
        job.art_outstanding -= 1
        self._maybe_complete(job)

    def _finish(self, job: _Job) -> None:
        cmd = job.cmd
        dt = _dt(cmd.dtype)
        off, _ = output_span(cmd)
        values = job.values
        if cmd.art is None and _accumulates(cmd):
            values = values + _read(self.memory, off, cmd.results, dt).astype(np.int64)
        self.memory.dma_write(Region.SHARED, off, _fit(values, dt))
        job.values = None
        job.finished = True
        self.sim.record(self.core.node_id, "compute_end", job.handle)
        self._maybe_complete(job)
        self._start_next()

    def _maybe_complete(self, job: _Job) -> None:
        if not job.finished or job.art_outstanding or job.handle in self.done:
            return
        ack = next(self._acks)
        self.memory.dma_write(Region.PRIVATE, COMPUTE_ACK_OFFSET,
                              np.array([ack], dtype="<u8").view(np.uint8))
        self.done[job.handle] = self.sim.now
        self.sim.record(self.core.node_id, "compute_done", job.handle, ack)
        for cb in job.on_done:
            cb(self.sim.now)

    def ack_word(self) -> int:
        """Host-visible count of completed compute commands."""
        return int(self.memory.view(Region.PRIVATE, COMPUTE_ACK_OFFSET, 1, "<u8")[0])


def art_transfer_bytes(cmd: ComputeCommand) -> int:
    return cmd.results * _dt(cmd.dtype).itemsize


def art_put_count(cmd: ComputeCommand) -> int:
    return math.ceil(cmd.results / cmd.art.every_n_results)
