"""
Two-node matrix multiplication and convolution case studies.

Matmul block map for ``C = M @ N`` with ``h = size / 2``: node ``k`` holds the
``k``-th block column of ``M`` and of ``C`` and the ``k``-th block row of
``N``. Each node first multiplies its ``M`` column by ``N[k, 1-k]`` (the
partial belongs to the peer's ``C`` column) while ART streams the results to
the peer's ACCUM handler, then multiplies by ``N[k, k]`` and accumulates
locally.

Convolution replicates the input on both nodes and splits the kernels in
two; each node streams its output channels into the peer's copy of the
output with ART.
"""

from dataclasses import dataclass, field

import numpy as np

from .addressing import GlobalAddress, SegmentLayout
from .api import Runtime, RuntimeConfig, start
from .compute import DTYPES, Accumulate, ArtConfig, Conv2d, MatMul, _fit
from .core import USER_OPCODE_MIN, HandlerContext
from .errors import BadDims, InvalidConfig
from .memory import Region
from .wire import HEADER_SIZE, join_u64

ACCUM = USER_OPCODE_MIN

CONV_PRESETS = {
    "k256r3": (256, 3, 256),
    "k192r5": (192, 5, 192),
    "k128r7": (128, 7, 128),
}
MATMUL_SIZES = (256, 512, 1024)
FEATURE_MAP = 64


def accum_handler(ctx: HandlerContext) -> None:
    """Add a medium payload element-wise into ``shared[dest]``.

    Arguments: dest offset (lo, hi), element type code.
    """
    dest = join_u64(ctx.args, 0)
    dtype = DTYPES[ctx.args[2]]
    region, off, nbytes = ctx.payload_ref
    count = nbytes // dtype.itemsize
    incoming = ctx.memory.view(region, off, count, dtype).astype(np.int64)
    target = ctx.memory.view(Region.SHARED, dest, count, dtype)
    target[:] = _fit(target.astype(np.int64) + incoming, dtype)


def default_art_chunk(packet_size: int, element_size: int, packets: int = 4) -> int:
    """Results per ART message so that each message fills ``packets`` packets."""
    return max(1, (packets * packet_size - HEADER_SIZE) // element_size)


def serial_matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact int64 product built from rank-1 updates (no BLAS, no floats)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0] or 0 in a.shape + b.shape:
        raise BadDims(f"cannot multiply {a.shape} by {b.shape}")
    a64, b64 = a.astype(np.int64), b.astype(np.int64)
    c = np.zeros((a.shape[0], b.shape[1]), dtype=np.int64)
    for p in range(a.shape[1]):
        c += np.multiply.outer(a64[:, p], b64[p, :])
    return c


def serial_conv_oracle(x: np.ndarray, w: np.ndarray, padding: int | None = None) -> np.ndarray:
    """Direct stride-1 convolution, one (channel, tap) at a time, int64."""
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise BadDims(f"incompatible conv shapes {x.shape} and {w.shape}")
    c, h, wd = x.shape
    k, _, r, s = w.shape
    pad = (r - 1) // 2 if padding is None else padding
    ho, wo = h + 2 * pad - r + 1, wd + 2 * pad - s + 1
    if min(c, h, wd, k, r, s, ho, wo) <= 0:
        raise BadDims("empty convolution")
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad), dtype=np.int64)
    xp[:, pad:pad + h, pad:pad + wd] = x
    w64 = w.astype(np.int64)
    out = np.zeros((k, ho, wo), dtype=np.int64)
    for ci in range(c):
        for i in range(r):
            for j in range(s):
                out += w64[:, ci, i, j][:, None, None] * xp[ci, i:i + ho, j:j + wo]
    return out


# -- matmul -------------------------------------------------------------------

@dataclass(frozen=True)
class MatmulPlan:
    size: int
    dtype: str = "int16"

    def __post_init__(self):
        if self.size <= 0 or self.size % 2:
            raise BadDims(f"matmul size must be a positive even number, got {self.size}")

    @property
    def half(self) -> int:
        return self.size // 2

    @property
    def itemsize(self) -> int:
        return np.dtype(self.dtype).itemsize

    def owner(self, matrix: str, i: int, j: int) -> int:
        """Node holding block ``(i, j)`` of ``M``, ``N`` or ``C``."""
        return i if matrix == "N" else j

    def schedule(self, node: int) -> list[tuple[int, int]]:
        """``N`` blocks multiplied by ``node`` in iteration order (remote-bound first)."""
        return [(node, 1 - node), (node, node)]

    # layout of one node's shared segment
    @property
    def offsets(self) -> dict[str, int]:
        s, h, e = self.size, self.half, self.itemsize
        col = s * h * e
        blk = h * h * e
        names = [("M", col), ("N0", blk), ("N1", blk), ("P", col), ("C", col), ("R", col)]
        out, pos = {}, 0
        for name, nbytes in names:
            out[name] = pos
            pos += nbytes
        out["end"] = pos
        return out


def matmul_segment_bytes(size: int, dtype: str = "int16", nodes: int = 2) -> int:
    if nodes == 1:
        return 3 * size * size * np.dtype(dtype).itemsize
    return MatmulPlan(size, dtype).offsets["end"]


def random_matmul_inputs(size: int, dtype: str = "int16", seed: int = 0):
    """Random operands whose products fit ``dtype`` exactly."""
    info = np.iinfo(dtype)
    bound = int(np.sqrt(info.max / size))
    rng = np.random.default_rng(seed)
    a = rng.integers(-bound, bound + 1, (size, size)).astype(dtype)
    b = rng.integers(-bound, bound + 1, (size, size)).astype(dtype)
    return a, b


@dataclass
class RunResult:
    cycles: int
    outputs: dict = field(default_factory=dict)
    exchanged_bytes: dict = field(default_factory=dict)
    art_puts: dict = field(default_factory=dict)


def parallel_matmul(rt: Runtime, size: int, a: np.ndarray, b: np.ndarray, *, art: bool = True,
                    every_n: int | None = None, dtype: str = "int16") -> RunResult:
    """Distributed ``a @ b`` on a two-node runtime.

    Returns the simulated cycles from first command to barrier release, and
    each node's ``C`` block column.
    """
    if rt.node_count != 2:
        raise InvalidConfig("parallel_matmul needs exactly two nodes")
    plan = MatmulPlan(size, dtype)
    s, h, e = size, plan.half, plan.itemsize
    off = plan.offsets
    if off["end"] > rt.layout.shared_size:
        raise InvalidConfig(f"shared segment of {rt.layout.shared_size} bytes cannot hold "
                            f"a {size}x{size} distributed matmul ({off['end']} bytes)")
    a = np.asarray(a, dtype=dtype)
    b = np.asarray(b, dtype=dtype)
    for k in range(2):
        rt.host_write(k, Region.SHARED, off["M"], np.ascontiguousarray(a[:, k * h:(k + 1) * h]))
        for j in range(2):
            rt.host_write(k, Region.SHARED, off[f"N{j}"],
                          np.ascontiguousarray(b[k * h:(k + 1) * h, j * h:(j + 1) * h]))
    for k in range(2):
        if ACCUM not in rt.nodes[k].core.handlers:
            rt.register_handler(k, ACCUM, accum_handler)
    every_n = every_n or default_art_chunk(rt.config.core.packet_size, e)

    t0 = rt.now
    first, second, moves = [], [], []
    for k in range(2):
        (_, j1), (_, j2) = plan.schedule(k)
        art_cfg = ArtConfig(every_n, GlobalAddress(1 - k, off["C"]), e, ACCUM) if art else None
        first.append(rt.compute(k, MatMul(s, h, h, off["M"], off[f"N{j1}"], off["P"],
                                          dtype, art=art_cfg)))
        second.append(rt.compute(k, MatMul(s, h, h, off["M"], off[f"N{j2}"], off["C"],
                                           dtype, accumulate=True)))
    if not art:
        # explicit variant: one PUT of the whole partial after the first product
        rt.wait_all(first)
        for k in range(2):
            moves.append(rt.put(k, GlobalAddress(1 - k, off["R"]), off["P"], s * h * e))
    rt.wait_all(first + second + moves)
    end = rt.barrier()
    if not art:
        merges = [rt.compute(k, Accumulate(off["R"], off["C"], s * h, dtype)) for k in range(2)]
        rt.wait_all(merges)
        end = rt.now
    result = RunResult(end - t0)
    for k in range(2):
        col = np.frombuffer(rt.host_read(k, Region.SHARED, off["C"], s * h * e), dtype=dtype)
        result.outputs[k] = col.reshape(s, h).copy()
        result.exchanged_bytes[k] = s * h * e
    result.art_puts = {k: _art_puts(rt, k) for k in range(2)}
    return result


def _art_puts(rt: Runtime, node: int) -> int:
    return sum(j.art_puts for j in rt.nodes[node].engine.jobs.values())


def single_node_matmul(rt: Runtime, a: np.ndarray, b: np.ndarray,
                       dtype: str = "int16") -> RunResult:
    """Whole product as one accelerator command on node 0 (the baseline)."""
    a = np.asarray(a, dtype=dtype)
    b = np.asarray(b, dtype=dtype)
    s = a.shape[0]
    if a.shape != (s, s) or b.shape != (s, s):
        raise BadDims("single_node_matmul expects square operands of equal size")
    e = np.dtype(dtype).itemsize
    a_off, b_off, c_off = 0, s * s * e, 2 * s * s * e
    rt.host_write(0, Region.SHARED, a_off, a)
    rt.host_write(0, Region.SHARED, b_off, b)
    t0 = rt.now
    rt.wait(rt.compute(0, MatMul(s, s, s, a_off, b_off, c_off, dtype)))
    c = np.frombuffer(rt.host_read(0, Region.SHARED, c_off, s * s * e), dtype=dtype)
    return RunResult(rt.now - t0, {0: c.reshape(s, s).copy()})


def assemble_matmul(outputs: dict, size: int) -> np.ndarray:
    return np.concatenate([outputs[0], outputs[1]], axis=1)


# -- convolution ---------------------------------------------------------------

@dataclass(frozen=True)
class ConvPlan:
    k: int
    r: int
    c_in: int
    h: int = FEATURE_MAP
    w: int = FEATURE_MAP
    dtype: str = "int32"

    def __post_init__(self):
        if self.k <= 0 or self.k % 2:
            raise BadDims(f"kernel count must be a positive even number, got {self.k}")

    @property
    def group(self) -> int:
        return self.k // 2

    def channels(self, node: int) -> range:
        return range(node * self.group, (node + 1) * self.group)

    @property
    def itemsize(self) -> int:
        return np.dtype(self.dtype).itemsize

    def offsets(self, kernels: int) -> dict[str, int]:
        e = self.itemsize
        x = self.c_in * self.h * self.w * e
        wt = kernels * self.c_in * self.r * self.r * e
        return {"x": 0, "w": x, "out": x + wt, "end": x + wt + self.k * self.h * self.w * e}


def conv_segment_bytes(k: int, r: int, c_in: int, dtype: str = "int32", nodes: int = 2) -> int:
    plan = ConvPlan(k, r, c_in, dtype=dtype)
    return plan.offsets(k if nodes == 1 else plan.group)["end"]


def random_conv_inputs(k: int, r: int, c_in: int, h: int = FEATURE_MAP, w: int = FEATURE_MAP,
                       seed: int = 0, bound: int = 2**7):
    rng = np.random.default_rng(seed)
    x = rng.integers(-bound, bound + 1, (c_in, h, w)).astype(np.int32)
    wt = rng.integers(-bound, bound + 1, (k, c_in, r, r)).astype(np.int32)
    return x, wt


def parallel_conv(rt: Runtime, x: np.ndarray, weights: np.ndarray, *,
                  every_n: int | None = None, dtype: str = "int32") -> RunResult:
    """Kernel-split convolution on two nodes; both end with the full output."""
    if rt.node_count != 2:
        raise InvalidConfig("parallel_conv needs exactly two nodes")
    k, c_in, r, _ = weights.shape
    _, h, w = x.shape
    plan = ConvPlan(k, r, c_in, h, w, dtype)
    off = plan.offsets(plan.group)
    if off["end"] > rt.layout.shared_size:
        raise InvalidConfig(f"shared segment too small for convolution ({off['end']} bytes)")
    e = plan.itemsize
    plane = h * w * e
    every_n = every_n or default_art_chunk(rt.config.core.packet_size, e)
    t0 = rt.now
    handles = []
    for node in range(2):
        rt.host_write(node, Region.SHARED, off["x"], np.ascontiguousarray(x, dtype=dtype))
        chans = plan.channels(node)
        rt.host_write(node, Region.SHARED, off["w"],
                      np.ascontiguousarray(weights[chans.start:chans.stop], dtype=dtype))
    for node in range(2):
        out_off = off["out"] + plan.channels(node).start * plane
        art = ArtConfig(every_n, GlobalAddress(1 - node, out_off), e)
        handles.append(rt.compute(node, Conv2d(c_in, h, w, plan.group, r, r, off["x"], off["w"],
                                               out_off, dtype=dtype, art=art)))
    rt.wait_all(handles)
    end = rt.barrier()
    result = RunResult(end - t0)
    for node in range(2):
        data = rt.host_read(node, Region.SHARED, off["out"], k * plane)
        result.outputs[node] = np.frombuffer(data, dtype=dtype).reshape(k, h, w).copy()
        result.exchanged_bytes[node] = plan.group * plane
        result.art_puts[node] = _art_puts(rt, node)
    return result


def single_node_conv(rt: Runtime, x: np.ndarray, weights: np.ndarray,
                     dtype: str = "int32") -> RunResult:
    k, c_in, r, _ = weights.shape
    _, h, w = x.shape
    plan = ConvPlan(k, r, c_in, h, w, dtype)
    off = plan.offsets(k)
    rt.host_write(0, Region.SHARED, off["x"], np.ascontiguousarray(x, dtype=dtype))
    rt.host_write(0, Region.SHARED, off["w"], np.ascontiguousarray(weights, dtype=dtype))
    t0 = rt.now
    rt.wait(rt.compute(0, Conv2d(c_in, h, w, k, r, r, off["x"], off["w"], off["out"],
                                 dtype=dtype)))
    data = rt.host_read(0, Region.SHARED, off["out"], k * h * w * plan.itemsize)
    return RunResult(rt.now - t0, {0: np.frombuffer(data, dtype=dtype).reshape(k, h, w).copy()})


# -- end-to-end case studies -----------------------------------------------------

@dataclass
class CaseReport:
    name: str
    macs: int
    single_cycles: int
    parallel_cycles: int
    clock_hz: float
    exact: bool
    node_invariant: bool
    exchanged_bytes: int
    art_puts: int

    @property
    def speedup(self) -> float:
        return self.single_cycles / self.parallel_cycles

    def gops(self, cycles: int) -> float:
        return 2 * self.macs / (cycles / self.clock_hz) / 1e9

    @property
    def single_gops(self) -> float:
        return self.gops(self.single_cycles)

    @property
    def parallel_gops(self) -> float:
        return self.gops(self.parallel_cycles)


def _runtime(base: RuntimeConfig, nodes: int, shared: int) -> Runtime:
    seg = base.segments
    layout = SegmentLayout(max(shared, seg.shared_size), seg.private_size)
    return start(base.replace(nodes=nodes, segments=layout, trace=False))


def matmul_case(size: int, config: RuntimeConfig | None = None, *, seed: int = 0,
                art: bool = True, dtype: str = "int16", verify: bool = True) -> CaseReport:
    config = config or RuntimeConfig()
    a, b = random_matmul_inputs(size, dtype, seed)
    with _runtime(config, 1, matmul_segment_bytes(size, dtype, 1)) as rt1:
        single = single_node_matmul(rt1, a, b, dtype)
    with _runtime(config, 2, matmul_segment_bytes(size, dtype, 2)) as rt2:
        par = parallel_matmul(rt2, size, a, b, art=art, dtype=dtype)
    c = assemble_matmul(par.outputs, size)
    exact = True
    if verify:
        exact = bool(np.array_equal(serial_matmul_oracle(a, b), c.astype(np.int64)))
    return CaseReport(f"matmul{size}", size ** 3, single.cycles, par.cycles,
                      config.dla.clock_hz, exact, bool(np.array_equal(single.outputs[0], c)),
                      par.exchanged_bytes[0], par.art_puts[0])


def conv_case(preset: str, config: RuntimeConfig | None = None, *, seed: int = 0,
              verify: bool = True, feature_map: int = FEATURE_MAP) -> CaseReport:
    config = config or RuntimeConfig()
    if preset not in CONV_PRESETS:
        raise InvalidConfig(f"unknown conv preset {preset!r}; choose from {sorted(CONV_PRESETS)}")
    k, r, c_in = CONV_PRESETS[preset]
    x, w = random_conv_inputs(k, r, c_in, feature_map, feature_map, seed)
    with _runtime(config, 1, conv_segment_bytes(k, r, c_in, nodes=1)) as rt1:
        single = single_node_conv(rt1, x, w)
    with _runtime(config, 2, conv_segment_bytes(k, r, c_in, nodes=2)) as rt2:
        par = parallel_conv(rt2, x, w)
    exact = bool(np.array_equal(par.outputs[0], par.outputs[1]))
    if verify:
        exact = exact and bool(np.array_equal(serial_conv_oracle(x, w), par.outputs[0]))
    macs = k * c_in * r * r * feature_map * feature_map
    return CaseReport(preset, macs, single.cycles, par.cycles, config.dla.clock_hz, exact,
                      bool(np.array_equal(single.outputs[0], par.outputs[0])),
                      par.exchanged_bytes[0], par.art_puts[0])
