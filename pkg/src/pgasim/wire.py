"""
Active-message encoding and fixed-MTU packetization.

Message image (little-endian)::

    off  size  field
      0     1  version (0x01)
      1     1  kind        0=request 1=reply
      2     1  variant     0=short 1=medium 2=long
      3     1  opcode
      4     2  src node
      6     2  dst node
      8     1  arg_count   <= 16
      9     1  flags
     10     2  reserved (zero)
     12     4  payload_len
     16     8  dest_offset (long only, else 0)
     24     8  token
     32    64  args, 16 x u32 (unused slots zero)
     96     -  payload

Packet framing is 18 bytes: seq u64, index u32, count u32, frag_len u16,
followed by ``frag_len`` body bytes.
"""

import enum
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import (BadVersion, GapDetected, MixedSeq, MtuTooSmall,
                     PayloadMismatch, TooManyArgs, Truncated, WireError)

VERSION = 0x01
HEADER_SIZE = 96
MAX_ARGS = 16
FRAME_SIZE = 18

_FIXED = struct.Struct("<BBBBHHBB2xIQQ")
_ARGS = struct.Struct("<16I")
_FRAME = struct.Struct("<QIIH")

assert _FIXED.size + _ARGS.size == HEADER_SIZE
assert _FRAME.size == FRAME_SIZE


class MessageKind(enum.IntEnum):
    REQUEST = 0
    REPLY = 1


class Variant(enum.IntEnum):
    SHORT = 0
    MEDIUM = 1
    LONG = 2


@dataclass(frozen=True)
class MessageHeader:
    kind: MessageKind
    variant: Variant
    opcode: int
    src: int
    dst: int
    args: tuple = ()
    payload_len: int = 0
    dest_offset: int = 0
    token: int = 0
    flags: int = 0
    version: int = VERSION

    @property
    def arg_count(self) -> int:
        return len(self.args)

    def check(self) -> None:
        if len(self.args) > MAX_ARGS:
            raise TooManyArgs(f"{len(self.args)} args, at most {MAX_ARGS} allowed")
        if self.variant == Variant.SHORT and self.payload_len:
            raise PayloadMismatch("short messages carry no payload")
        if self.variant != Variant.LONG and self.dest_offset:
            raise WireError("dest_offset is only meaningful for long messages")
        for a in self.args:
            if not 0 <= a < 2**32:
                raise WireError(f"argument {a} does not fit in u32")


@dataclass(frozen=True)
class Packet:
    seq: int
    index: int
    count: int
    body: bytes = field(repr=False)

    @property
    def frag_len(self) -> int:
        return len(self.body)

    def to_bytes(self) -> bytes:
        return _FRAME.pack(self.seq, self.index, self.count, len(self.body)) + self.body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Packet":
        if len(data) < FRAME_SIZE:
            raise Truncated(f"packet frame needs {FRAME_SIZE} bytes, got {len(data)}")
        seq, index, count, frag_len = _FRAME.unpack_from(data)
        body = bytes(data[FRAME_SIZE:])
        if len(body) != frag_len:
            raise Truncated(f"frame declares {frag_len} body bytes, got {len(body)}")
        return cls(seq, index, count, body)


def encode_message(header: MessageHeader, payload: bytes = b"") -> bytes:
    header.check()
    if len(payload) != header.payload_len:
        raise PayloadMismatch(
            f"payload is {len(payload)} bytes, header says {header.payload_len}")
    args = tuple(header.args) + (0,) * (MAX_ARGS - len(header.args))
    fixed = _FIXED.pack(header.version, header.kind, header.variant, header.opcode,
                        header.src, header.dst, len(header.args), header.flags,
                        header.payload_len, header.dest_offset, header.token)
    return b"".join((fixed, _ARGS.pack(*args), payload))


def decode_header(data: bytes) -> MessageHeader:
    if len(data) < HEADER_SIZE:
        raise Truncated(f"need {HEADER_SIZE} header bytes, got {len(data)}")
    (version, kind, variant, opcode, src, dst, argc, flags,
     payload_len, dest_offset, token) = _FIXED.unpack_from(data)
    if version != VERSION:
        raise BadVersion(f"version byte {version:#04x}, expected {VERSION:#04x}")
    if argc > MAX_ARGS:
        raise TooManyArgs(f"header declares {argc} args")
    try:
        kind, variant = MessageKind(kind), Variant(variant)
    except ValueError as exc:
        raise WireError(str(exc)) from None
    args = _ARGS.unpack_from(data, _FIXED.size)[:argc]
    return MessageHeader(kind, variant, opcode, src, dst, args, payload_len,
                         dest_offset, token, flags, version)


def decode_message(data: bytes) -> tuple[MessageHeader, bytes]:
    header = decode_header(data)
    payload = bytes(data[HEADER_SIZE:])
    if len(payload) < header.payload_len:
        raise Truncated(f"payload has {len(payload)} of {header.payload_len} bytes")
    if len(payload) > header.payload_len:
        raise PayloadMismatch(f"{len(payload) - header.payload_len} trailing bytes")
    return header, payload


def packet_count(message_len: int, mtu_payload: int) -> int:
    return max(1, math.ceil(message_len / mtu_payload))


def packetize(message: bytes, mtu_payload: int, seq: int = 0) -> list[Packet]:
    if mtu_payload < HEADER_SIZE:
        raise MtuTooSmall(f"mtu {mtu_payload} cannot hold the {HEADER_SIZE}-byte header")
    if mtu_payload > 0xFFFF:
        raise MtuTooSmall(f"mtu {mtu_payload} exceeds the u16 fragment length field")
    count = packet_count(len(message), mtu_payload)
    view = memoryview(message)
    return [Packet(seq, i, count, bytes(view[i * mtu_payload:(i + 1) * mtu_payload]))
            for i in range(count)]


class Reassembler:
    """Incremental in-order reassembly of one message's packets."""

    __slots__ = ("seq", "count", "parts")

    def __init__(self, first: Packet):
        if first.index != 0:
            raise GapDetected(f"seq {first.seq}: stream starts at index {first.index}")
        self.seq = first.seq
        self.count = first.count
        self.parts = [first.body]

    @property
    def done(self) -> bool:
        return len(self.parts) == self.count

    def feed(self, packet: Packet) -> None:
        if packet.seq != self.seq:
            raise MixedSeq(f"packet of seq {packet.seq} inside seq {self.seq}")
        if packet.index != len(self.parts) or packet.count != self.count:
            raise GapDetected(
                f"seq {self.seq}: expected index {len(self.parts)}/{self.count}, "
                f"got {packet.index}/{packet.count}")
        self.parts.append(packet.body)

    def message(self) -> bytes:
        if not self.done:
            raise GapDetected(f"seq {self.seq}: {len(self.parts)} of {self.count} packets")
        return b"".join(self.parts)


def reassemble(packets: Iterable[Packet]) -> tuple[MessageHeader, bytes]:
    it = iter(packets)
    try:
        r = Reassembler(next(it))
    except StopIteration:
        raise Truncated("no packets") from None
    for p in it:
        r.feed(p)
    return decode_message(r.message())


def split_u64(value: int) -> tuple[int, int]:
    """Split a 64-bit value into two u32 message arguments (lo, hi)."""
    return value & 0xFFFFFFFF, value >> 32


def join_u64(args: Sequence[int], at: int = 0) -> int:
    return args[at] | (args[at + 1] << 32)
