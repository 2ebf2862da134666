import numpy as np
import pytest

from pgasim import RuntimeConfig, start
from pgasim.addressing import KiB, MiB, SegmentLayout
from pgasim.errors import BadDims, InvalidConfig
from pgasim.workloads import (ConvPlan, MatmulPlan, assemble_matmul, matmul_case, parallel_conv,
                              parallel_matmul, random_conv_inputs, random_matmul_inputs,
                              serial_conv_oracle, serial_matmul_oracle, single_node_conv,
                              single_node_matmul)


def runtime(nodes=2, shared=1 * MiB):
    return start(RuntimeConfig(nodes=nodes, segments=SegmentLayout(shared, 64 * KiB)))


def test_matmul_plan_assigns_every_block_once():
    plan = MatmulPlan(8)
    for name in "MNC":
        owners = {(i, j): plan.owner(name, i, j) for i in range(2) for j in range(2)}
        assert set(owners.values()) == {0, 1}
        assert sorted(owners.values()) == [0, 0, 1, 1]
    assert plan.owner("C", 1, 0) == plan.owner("C", 0, 0) == 0
    covered = [blk for node in range(2) for blk in plan.schedule(node)]
    assert sorted(covered) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_matmul_plan_needs_even_size():
    with pytest.raises(BadDims):
        MatmulPlan(5)


def test_conv_plan_even_split():
    plan = ConvPlan(6, 3, 2)
    assert [len(plan.channels(n)) for n in range(2)] == [3, 3]
    assert list(plan.channels(0)) + list(plan.channels(1)) == list(range(6))
    with pytest.raises(BadDims):
        ConvPlan(5, 3, 2)


def test_oracle_identity_and_transpose_law():
    rng = np.random.default_rng(0)
    a = rng.integers(-20, 20, (5, 7))
    b = rng.integers(-20, 20, (7, 3))
    assert (serial_matmul_oracle(np.eye(5, dtype=int), a) == a).all()
    assert (serial_matmul_oracle(a, b) == serial_matmul_oracle(b.T, a.T).T).all()
    with pytest.raises(BadDims):
        serial_matmul_oracle(a, a)


def test_conv_oracle_identity_kernel():
    x = np.arange(2 * 5 * 5).reshape(2, 5, 5)
    w = np.zeros((2, 2, 1, 1), dtype=int)
    w[0, 0] = w[1, 1] = 1
    assert (serial_conv_oracle(x, w) == x).all()
    with pytest.raises(BadDims):
        serial_conv_oracle(x, np.ones((1, 3, 1, 1)))


def test_four_by_four_matmul():
    a = np.arange(16, dtype=np.int16).reshape(4, 4) - 8
    b = np.arange(16, dtype=np.int16).reshape(4, 4)[::-1].copy()
    with runtime() as rt:
        res = parallel_matmul(rt, 4, a, b)
    assert (assemble_matmul(res.outputs, 4) == serial_matmul_oracle(a, b)).all()


def test_c_blocks_are_column_owned():
    a, b = random_matmul_inputs(8, seed=1)
    c = serial_matmul_oracle(a, b)
    with runtime() as rt:
        res = parallel_matmul(rt, 8, a, b)
    assert (res.outputs[0] == c[:, :4]).all()   # C00 and C10
    assert (res.outputs[1] == c[:, 4:]).all()   # C01 and C11


@pytest.mark.parametrize("size", [4, 8, 16, 256])
@pytest.mark.parametrize("art", [True, False])
def test_distributed_matmul_equals_serial_and_single_node(size, art):
    a, b = random_matmul_inputs(size, seed=size)
    with runtime(1, 2 * MiB) as rt1:
        single = single_node_matmul(rt1, a, b)
    with runtime(2, 2 * MiB) as rt2:
        par = parallel_matmul(rt2, size, a, b, art=art)
    c = assemble_matmul(par.outputs, size)
    assert (c == serial_matmul_oracle(a, b)).all()
    assert (c == single.outputs[0]).all()
    assert 2 * par.cycles >= single.cycles


def test_parallel_matmul_rejects_wrong_node_count():
    with runtime(1) as rt, pytest.raises(InvalidConfig):
        parallel_matmul(rt, 4, *random_matmul_inputs(4))


def test_small_conv_on_both_nodes():
    x, w = random_conv_inputs(4, 3, 4, 8, 8, seed=2)
    with runtime() as rt:
        res = parallel_conv(rt, x, w)
    want = serial_conv_oracle(x, w)
    assert (res.outputs[0] == want).all() and (res.outputs[1] == want).all()
    assert res.exchanged_bytes[0] == 2 * 8 * 8 * 4


@pytest.mark.parametrize("k,r,c", [(8, 5, 3), (6, 7, 2), (4, 1, 5)])
def test_conv_node_count_invariance(k, r, c):
    x, w = random_conv_inputs(k, r, c, 12, 12, seed=k)
    with runtime(1) as rt1:
        single = single_node_conv(rt1, x, w)
    with runtime(2) as rt2:
        par = parallel_conv(rt2, x, w)
    assert (single.outputs[0] == par.outputs[0]).all()
    assert 2 * par.cycles >= single.cycles


def test_matmul_speedup_grows_with_size():
    speedups = [matmul_case(s, verify=False).speedup for s in (256, 512, 1024)]
    assert speedups == sorted(speedups)
    assert all(s <= 2 for s in speedups)
