"""
Node identity and the partitioned global address space.

Every node owns one shared segment of identical size plus a private region.
A ``GlobalAddress`` names a byte in some node's shared segment; remote
access to it always goes through messages.
"""

from dataclasses import dataclass

from .errors import InvalidLayout, OutOfSegment

KiB = 1024
MiB = 1024 * KiB


@dataclass(frozen=True)
class SegmentLayout:
    shared_size: int = 4 * MiB
    private_size: int = 1 * MiB


@dataclass(frozen=True, order=True)
class GlobalAddress:
    node: int
    offset: int

    def __add__(self, delta: int) -> "GlobalAddress":
        return GlobalAddress(self.node, self.offset + delta)


def validate_layout(layout: SegmentLayout, node_count: int) -> None:
    if node_count < 1:
        raise InvalidLayout(f"node_count must be >= 1, got {node_count}")
    if layout.shared_size <= 0 or layout.private_size <= 0:
        raise InvalidLayout(
            f"segment sizes must be positive: shared={layout.shared_size} "
            f"private={layout.private_size}"
        )


def resolve(ga: GlobalAddress, layout: SegmentLayout, length: int = 1,
            node_count: int | None = None) -> int:
    """Map a global address to the local offset in its node's shared segment.

    ``length`` extends the bounds check to ``[offset, offset + length)``; a
    zero length only requires ``offset <= shared_size``.
    """
    if ga.node < 0 or (node_count is not None and ga.node >= node_count):
        raise OutOfSegment(f"node {ga.node} is not a valid rank")
    if ga.offset < 0 or length < 0:
        raise OutOfSegment(f"negative offset/length: {ga.offset}, {length}")
    end = ga.offset + length
    limit = layout.shared_size
    in_bounds = end <= limit if length else ga.offset <= limit
    if not in_bounds:
        raise OutOfSegment(
            f"[{ga.offset}, {end}) exceeds shared segment of {layout.shared_size} bytes"
        )
    return ga.offset
