import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgasim.addressing import KiB, GlobalAddress, SegmentLayout, resolve, validate_layout
from pgasim.errors import InvalidLayout, OutOfSegment

LAYOUT = SegmentLayout(64 * KiB, 64 * KiB)


def test_resolve_zero_offset():
    assert resolve(GlobalAddress(1, 0), LAYOUT) == 0


def test_resolve_in_bounds():
    assert resolve(GlobalAddress(0, 4096), LAYOUT) == 4096


def test_resolve_at_segment_end_fails():
    with pytest.raises(OutOfSegment):
        resolve(GlobalAddress(0, 65536), LAYOUT)


def test_resolve_checks_access_length():
    assert resolve(GlobalAddress(0, 65536 - 16), LAYOUT, 16) == 65520
    with pytest.raises(OutOfSegment):
        resolve(GlobalAddress(0, 65536 - 16), LAYOUT, 17)


def test_resolve_rejects_bad_rank():
    with pytest.raises(OutOfSegment):
        resolve(GlobalAddress(2, 0), LAYOUT, node_count=2)


def test_global_address_offsetting():
    assert GlobalAddress(1, 8) + 8 == GlobalAddress(1, 16)


@pytest.mark.parametrize("layout,nodes", [(LAYOUT, 2)])
def test_validate_layout_ok(layout, nodes):
    validate_layout(layout, nodes)


@pytest.mark.parametrize("layout,nodes", [
    (SegmentLayout(0, 64 * KiB), 2),
    (SegmentLayout(64 * KiB, 0), 2),
    (LAYOUT, 0),
])
def test_validate_layout_rejects(layout, nodes):
    with pytest.raises(InvalidLayout):
        validate_layout(layout, nodes)


@given(st.integers(0, 1 << 20))
def test_resolve_never_exceeds_segment(offset):
    try:
        got = resolve(GlobalAddress(0, offset), LAYOUT)
    except OutOfSegment:
        assert offset >= LAYOUT.shared_size
    else:
        assert got == offset < LAYOUT.shared_size
