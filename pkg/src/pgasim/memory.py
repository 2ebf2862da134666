"""Per-node shared and private memories with bounds-checked DMA access."""

import enum

import numpy as np

from .addressing import SegmentLayout
from .errors import OutOfBounds

# Start of private memory holds host-visible control words.
CONTROL_BYTES = 64
COMPUTE_ACK_OFFSET = 0
DEFAULT_SCRATCH = 64 * 1024


class Region(str, enum.Enum):
    SHARED = "shared"
    PRIVATE = "private"


class NodeMemory:
    """Byte-addressed shared segment plus private memory.

    Private memory layout: ``[0, 64)`` control words (compute ack at 0),
    then the medium-message scratch ring, then free space.
    """

    def __init__(self, layout: SegmentLayout, scratch_size: int = DEFAULT_SCRATCH):
        self.layout = layout
        self.shared = np.zeros(layout.shared_size, dtype=np.uint8)
        self.private = np.zeros(layout.private_size, dtype=np.uint8)
        self.scratch_base = min(CONTROL_BYTES, layout.private_size)
        self.scratch_size = max(0, min(scratch_size, layout.private_size - self.scratch_base))
        self._scratch_head = 0

    def _region(self, region) -> np.ndarray:
        return self.shared if Region(region) is Region.SHARED else self.private

    def _check(self, buf: np.ndarray, region, offset: int, length: int) -> None:
        if offset < 0 or length < 0 or offset + length > buf.size or (
                length and offset >= buf.size):
            raise OutOfBounds(
                f"{Region(region).value}[{offset}, {offset + length}) outside "
                f"{buf.size}-byte region")

    def dma_read(self, region, offset: int, length: int) -> bytes:
        buf = self._region(region)
        self._check(buf, region, offset, length)
        return buf[offset:offset + length].tobytes()

    def dma_write(self, region, offset: int, data) -> None:
        buf = self._region(region)
        raw = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) \
            else data.view(np.uint8).reshape(-1)
        self._check(buf, region, offset, raw.size)
        buf[offset:offset + raw.size] = raw

    def view(self, region, offset: int, count: int, dtype) -> np.ndarray:
        """Typed, writable view of ``count`` elements (for compute kernels)."""
        dtype = np.dtype(dtype)
        buf = self._region(region)
        self._check(buf, region, offset, count * dtype.itemsize)
        return buf[offset:offset + count * dtype.itemsize].view(dtype)

    def scratch_alloc(self, length: int) -> int:
        """Reserve ``length`` bytes of the medium scratch ring.

        Returns the private-memory offset. Allocation wraps to the ring start
        when the tail cannot hold the request.
        """
        if length > self.scratch_size:
            raise OutOfBounds(
                f"medium payload of {length} bytes exceeds {self.scratch_size}-byte scratch")
        if self._scratch_head + length > self.scratch_size:
            self._scratch_head = 0
        off = self.scratch_base + self._scratch_head
        self._scratch_head += length
        return off
