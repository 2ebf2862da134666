import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgasim.addressing import MiB
from pgasim.errors import (BadVersion, GapDetected, MixedSeq, MtuTooSmall, PayloadMismatch,
                           TooManyArgs, Truncated)
from pgasim.wire import (FRAME_SIZE, HEADER_SIZE, MessageHeader, MessageKind, Packet, Variant,
                         decode_message, encode_message, join_u64, packet_count, packetize,
                         reassemble, split_u64)

PUT = 0x01


def long_header(n, **kw):
    return MessageHeader(MessageKind.REQUEST, Variant.LONG, PUT, 0, 1, payload_len=n, **kw)


def test_short_message_is_one_fixed_header():
    h = MessageHeader(MessageKind.REQUEST, Variant.SHORT, PUT, 0, 1)
    assert len(encode_message(h)) == HEADER_SIZE == 96


def test_long_message_length():
    assert len(encode_message(long_header(64, dest_offset=0x100), bytes(64))) == 160


def test_too_many_args():
    h = MessageHeader(MessageKind.REQUEST, Variant.SHORT, PUT, 0, 1, args=tuple(range(17)))
    with pytest.raises(TooManyArgs):
        encode_message(h)


def test_payload_length_mismatch():
    with pytest.raises(PayloadMismatch):
        encode_message(long_header(10), bytes(9))


def test_bad_version():
    data = bytearray(encode_message(long_header(0)))
    data[0] ^= 0xFF
    with pytest.raises(BadVersion):
        decode_message(bytes(data))


def test_truncated_header():
    with pytest.raises(Truncated):
        decode_message(encode_message(long_header(0))[:95])


def test_little_endian_layout():
    h = long_header(3, dest_offset=0x0102030405060708, token=0xAABB, args=(7,))
    data = encode_message(h, b"xyz")
    assert data[0] == 0x01
    assert int.from_bytes(data[12:16], "little") == 3
    assert int.from_bytes(data[16:24], "little") == 0x0102030405060708
    assert int.from_bytes(data[24:32], "little") == 0xAABB
    assert int.from_bytes(data[32:36], "little") == 7
    assert data[96:] == b"xyz"


def test_single_packet_short_message():
    h = MessageHeader(MessageKind.REQUEST, Variant.SHORT, PUT, 0, 1)
    assert len(packetize(encode_message(h), 512)) == 1


def test_two_mib_packet_count():
    assert packet_count(96 + 2 * MiB, 512) == math.ceil(2097248 / 512) == 4097


def test_mtu_too_small():
    with pytest.raises(MtuTooSmall):
        packetize(bytes(96), 64)


def test_packet_frame_roundtrip():
    p = Packet(5, 1, 3, b"abc")
    assert len(p.to_bytes()) == FRAME_SIZE + 3
    assert Packet.from_bytes(p.to_bytes()) == p


def _message(n=1000):
    return encode_message(long_header(n), bytes(range(256)) * (n // 256) + bytes(n % 256))


def test_reassemble_inverse():
    packets = packetize(_message(), 256, seq=9)
    assert len(packets) == 5
    h, p = reassemble(packets)
    assert h == long_header(1000) and len(p) == 1000


def test_dropped_packet_detected():
    packets = packetize(_message(), 300)
    assert len(packets) == 4
    with pytest.raises(GapDetected):
        reassemble(packets[:2] + packets[3:])


def test_interleaved_seqs_detected():
    a = packetize(_message(), 300, seq=1)
    b = packetize(_message(), 300, seq=2)
    with pytest.raises(MixedSeq):
        reassemble([a[0], b[1], a[1]])


def test_u64_split_join():
    assert join_u64(split_u64(0x123456789A), 0) == 0x123456789A


headers = st.builds(
    lambda kind, variant, op, src, dst, args, token, flags, off, payload: (
        MessageHeader(kind, variant, op, src, dst, tuple(args),
                      0 if variant is Variant.SHORT else len(payload),
                      off if variant is Variant.LONG else 0, token, flags),
        b"" if variant is Variant.SHORT else payload),
    st.sampled_from(MessageKind), st.sampled_from(Variant), st.integers(0, 255),
    st.integers(0, 0xFFFF), st.integers(0, 0xFFFF),
    st.lists(st.integers(0, 0xFFFFFFFF), max_size=16), st.integers(0, 2**64 - 1),
    st.integers(0, 255), st.integers(0, 2**64 - 1), st.binary(max_size=3000))


@settings(max_examples=200)
@given(headers, st.integers(96, 1500))
def test_roundtrip_and_packet_laws(hp, mtu):
    header, payload = hp
    data = encode_message(header, payload)
    assert decode_message(data) == (header, payload)
    packets = packetize(data, mtu, seq=42)
    assert len(packets) == math.ceil((96 + header.payload_len) / mtu)
    assert sum(p.frag_len for p in packets) == len(data)
    assert all(p.index < p.count == len(packets) for p in packets)
    assert reassemble(packets) == (header, payload)
