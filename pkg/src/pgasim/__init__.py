"""Partitioned global address space runtime over simulated accelerator nodes."""

from .addressing import GlobalAddress, SegmentLayout, resolve, validate_layout
from .api import Handle, Runtime, RuntimeConfig, init, start
from .compute import (Accumulate, ArtConfig, Conv2d, DlaConfig, MatMul,
                      art_chunks, art_schedule)
from .core import COMPUTE, GET, PUT, CoreConfig, HandlerContext
from .errors import PgasError
from .memory import NodeMemory, Region
from .transport import LinkConfig, Simulator, Topology, route
from .wire import MessageHeader, MessageKind, Packet, Variant

__version__ = "0.1.0"

__all__ = [
    "Accumulate", "ArtConfig", "COMPUTE", "Conv2d", "CoreConfig", "DlaConfig", "GET",
    "GlobalAddress", "Handle", "HandlerContext", "LinkConfig", "MatMul", "MessageHeader",
    "MessageKind", "NodeMemory", "PUT", "Packet", "PgasError", "Region", "Runtime",
    "RuntimeConfig", "SegmentLayout", "Simulator", "Topology", "Variant", "art_chunks",
    "art_schedule", "init", "resolve", "route", "start", "validate_layout",
]
