import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgasim import GlobalAddress, RuntimeConfig, start
from pgasim.addressing import KiB, SegmentLayout
from pgasim.compute import (Accumulate, ArtConfig, Conv2d, DlaConfig, MatMul, art_chunks,
                            art_put_count, art_schedule, art_transfer_bytes, compute_cycles,
                            conv2d_exact, from_args, matmul_exact, to_args)
from pgasim.errors import BadDims, NumericOverflow, OutOfBounds
from pgasim.memory import Region

from conftest import events


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    c = [[0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            c[i][j] = sum(int(a[i, p]) * int(b[p, j]) for p in range(k))
    return np.array(c, dtype=np.int64)


def direct_conv(x, w, pad):
    c, h, wd = x.shape
    k, _, r, s = w.shape
    out = np.zeros((k, h + 2 * pad - r + 1, wd + 2 * pad - s + 1), dtype=np.int64)
    for o in range(k):
        for y in range(out.shape[1]):
            for z in range(out.shape[2]):
                acc = 0
                for ci in range(c):
                    for i in range(r):
                        for j in range(s):
                            yy, zz = y + i - pad, z + j - pad
                            if 0 <= yy < h and 0 <= zz < wd:
                                acc += int(x[ci, yy, zz]) * int(w[o, ci, i, j])
                out[o, y, z] = acc
    return out


def load(rt, node, offset, array):
    rt.host_write(node, Region.SHARED, offset, np.ascontiguousarray(array))


def read(rt, node, offset, shape, dtype="int32"):
    n = int(np.prod(shape))
    data = rt.host_read(node, Region.SHARED, offset, n * np.dtype(dtype).itemsize)
    return np.frombuffer(data, dtype=dtype).reshape(shape)


def test_peak_rate():
    cfg = DlaConfig()
    assert cfg.macs_per_cycle == 2048
    assert cfg.peak_gops == pytest.approx(1024)


def test_identity_matmul(rt):
    a = np.array([[3, -1], [7, 2]], dtype=np.int32)
    load(rt, 0, 0, np.eye(2, dtype=np.int32))
    load(rt, 0, 64, a)
    rt.wait(rt.compute(0, MatMul(2, 2, 2, 0, 64, 128)))
    assert (read(rt, 0, 128, (2, 2)) == a).all()


def test_matmul_matches_triple_loop(rt):
    rng = np.random.default_rng(3)
    a = rng.integers(-100, 100, (8, 8)).astype(np.int32)
    b = rng.integers(-100, 100, (8, 8)).astype(np.int32)
    load(rt, 0, 0, a)
    load(rt, 0, 256, b)
    rt.wait(rt.compute(0, MatMul(8, 8, 8, 0, 256, 512)))
    assert (read(rt, 0, 512, (8, 8)) == triple_loop(a, b)).all()


def test_matmul_accumulate(rt):
    a = np.arange(6, dtype=np.int32).reshape(2, 3)
    b = np.arange(12, dtype=np.int32).reshape(3, 4)
    load(rt, 0, 0, a)
    load(rt, 0, 64, b)
    load(rt, 0, 256, np.full((2, 4), 5, dtype=np.int32))
    rt.wait(rt.compute(0, MatMul(2, 3, 4, 0, 64, 256, accumulate=True)))
    assert (read(rt, 0, 256, (2, 4)) == a @ b + 5).all()


def test_matmul_1024_cycle_model():
    cmd = MatMul(1024, 1024, 1024, 0, 0, 0)
    cfg = DlaConfig(drain_overhead_cycles=512)
    assert compute_cycles(cmd, cfg) == 2**30 // 2048 + 512 == 524800
    assert cfg.gops(cmd.macs, 524800) == pytest.approx(1023.0, abs=0.1)
    assert 950 <= DlaConfig().gops(cmd.macs, compute_cycles(cmd, DlaConfig())) <= 1024


def test_exact_numerics_switch_to_int64_when_float_is_inexact():
    a = np.full((2, 2), 2**31 - 1, dtype=np.int64)
    assert matmul_exact(a, a)[0, 0] == 2 * (2**31 - 1) ** 2


def test_zero_dimension(rt):
    with pytest.raises(BadDims):
        rt.compute(0, MatMul(0, 4, 4, 0, 0, 0))


def test_operands_outside_segment(rt):
    with pytest.raises(OutOfBounds):
        rt.compute(0, MatMul(1024, 1024, 1024, 0, 0, 0))


def test_overflow_is_reported(rt):
    load(rt, 0, 0, np.full((1, 4), 30000, dtype=np.int16))
    load(rt, 0, 64, np.full((4, 1), 30000, dtype=np.int16))
    rt.compute(0, MatMul(1, 4, 1, 0, 64, 128, "int16"))
    with pytest.raises(NumericOverflow):
        rt.run_until_idle()


def test_commands_run_in_fifo_order(rt):
    h1 = rt.compute(0, Accumulate(0, 4096, 1000))
    h2 = rt.compute(0, Accumulate(0, 8192, 10))
    rt.wait_all([h1, h2])
    starts = [e.info[0] for e in events(rt, "compute_start", 0)]
    assert starts == [0, 1]
    assert rt.done_time(h1) < rt.done_time(h2)
    assert rt.nodes[0].engine.ack_word() == 2


def test_identity_conv(rt):
    x = np.arange(16, dtype=np.int32).reshape(1, 4, 4)
    load(rt, 0, 0, x)
    load(rt, 0, 256, np.ones((1, 1, 1, 1), dtype=np.int32))
    rt.wait(rt.compute(0, Conv2d(1, 4, 4, 1, 1, 1, 0, 256, 512)))
    assert (read(rt, 0, 512, (1, 4, 4)) == x).all()


def test_conv_matches_direct_oracle(rt):
    rng = np.random.default_rng(5)
    x = rng.integers(-50, 50, (4, 8, 8)).astype(np.int32)
    w = rng.integers(-50, 50, (4, 4, 3, 3)).astype(np.int32)
    load(rt, 0, 0, x)
    load(rt, 0, 4096, w)
    rt.wait(rt.compute(0, Conv2d(4, 8, 8, 4, 3, 3, 0, 4096, 8192)))
    assert (read(rt, 0, 8192, (4, 8, 8)) == direct_conv(x, w, 1)).all()


def test_conv_valid_padding():
    rng = np.random.default_rng(6)
    x = rng.integers(-9, 9, (2, 6, 7))
    w = rng.integers(-9, 9, (3, 2, 3, 2))
    assert (conv2d_exact(x, w, 0) == direct_conv(x, w, 0)).all()


def test_conv_mac_count():
    cmd = Conv2d(256, 64, 64, 256, 3, 3, 0, 0, 0)
    assert cmd.macs == 256 * 256 * 9 * 64 * 64
    assert (cmd.h_out, cmd.w_out) == (64, 64)


def test_art_equal_chunks():
    assert art_chunks(1024, 256) == [(0, 256), (256, 256), (512, 256), (768, 256)]


def test_art_partial_final_chunk():
    chunks = art_chunks(1000, 256)
    assert [c for _, c in chunks] == [256, 256, 256, 232]


def test_command_argument_roundtrip():
    cmds = [MatMul(3, 4, 5, 8, 16, 32, "int16", True, ArtConfig(7, GlobalAddress(1, 64), 2, 0x80)),
            Conv2d(2, 8, 8, 4, 3, 3, 0, 100, 200, padding=0),
            Conv2d(2, 8, 8, 4, 5, 5, 0, 100, 200, art=ArtConfig(9, GlobalAddress(0, 4), 4)),
            Accumulate(0, 64, 10, "int64")]
    for cmd in cmds:
        assert from_args(to_args(cmd)) == cmd


def _art_run(n, every_n, m=8, k=16, dtype="int32"):
    with start(RuntimeConfig(segments=SegmentLayout(256 * KiB, 64 * KiB))) as rt:
        rng = np.random.default_rng(n)
        a = rng.integers(-9, 9, (m, k)).astype(dtype)
        b = rng.integers(-9, 9, (k, n)).astype(dtype)
        load(rt, 0, 0, a)
        load(rt, 0, 16 * KiB, b)
        e = np.dtype(dtype).itemsize
        art = ArtConfig(every_n, GlobalAddress(1, 100 * KiB), e) if every_n else None
        cmd = MatMul(m, k, n, 0, 16 * KiB, 64 * KiB, dtype, art=art)
        rt.wait(rt.compute(0, cmd))
        rt.run_until_idle()
        local = read(rt, 0, 64 * KiB, (m, n), dtype).copy()
        remote = read(rt, 1, 100 * KiB, (m, n), dtype).copy() if art else None
        return rt, cmd, local, remote, list(rt.sim.trace)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(1, 100))
def test_art_conservation_and_independence(n, every_n):
    _, cmd, local, remote, trace = _art_run(n, every_n)
    _, _, plain, _, _ = _art_run(n, None)
    emits = [e.info for e in trace if e.kind == "art_emit"]
    assert len(emits) == art_put_count(cmd) == math.ceil(8 * n / every_n)
    assert sum(e[4] for e in emits) == art_transfer_bytes(cmd) == 8 * n * 4
    assert [e[6] for e in emits] == [100 * KiB + e[2] * 4 for e in emits]
    assert (local == plain).all() and (remote == plain).all()


def test_art_never_emits_before_results_are_valid():
    rt, cmd, *_ , trace = _art_run(64, 50, m=64, k=64)
    start_ev = next(e for e in trace if e.kind == "compute_start")
    cycles = start_ev.info[1]
    for e in trace:
        if e.kind == "art_emit":
            last = e.info[2] + e.info[3]
            assert e.time >= start_ev.time + cycles * last / cmd.results


def test_numerics_independent_of_timing_parameters():
    outs = []
    for dla in (DlaConfig(), DlaConfig(pe_rows=2, pe_cols=2, drain_overhead_cycles=5)):
        with start(RuntimeConfig(dla=dla)) as rt:
            load(rt, 0, 0, np.arange(64, dtype=np.int32).reshape(8, 8))
            rt.wait(rt.compute(0, MatMul(8, 8, 8, 0, 0, 1024)))
            outs.append(read(rt, 0, 1024, (8, 8)).copy())
    assert (outs[0] == outs[1]).all()


def test_art_overlaps_transfer_with_compute():
    with start(RuntimeConfig(segments=SegmentLayout(2048 * KiB, 64 * KiB))) as rt:
        cmd = MatMul(256, 1024, 64, 0, 0, 1024 * KiB,
                     art=ArtConfig(1000, GlobalAddress(1, 0), 4))
        t0 = rt.now
        rt.wait(rt.compute(0, cmd))
        rt.run_until_idle()
        end = max(e.time for e in events(rt, "handler_end", 1))
        cfg = rt.config.link
        cycles = compute_cycles(cmd, rt.config.dla)
        transfer = art_transfer_bytes(cmd) / cfg.bytes_per_cycle
        assert cycles > transfer
        assert end - t0 < cycles + transfer


def test_art_schedule_is_proportional():
    sched = art_schedule(1000, 256, start=10, cycles=100)
    assert [c.emit_time for c in sched] == [10 + math.ceil(100 * x / 1000)
                                            for x in (256, 512, 768, 1000)]
