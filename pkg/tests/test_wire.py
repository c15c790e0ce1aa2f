import pytest
from hypothesis import given, strategies as st

from mpvideo.wire import (ACK_SIZE, DATA_HEADER_SIZE, AckPacket, BadType, DataPacket, Feedback,
                          PayloadTooLarge, Truncated, WireConfig, decode_ack, decode_data,
                          decode_feedback, encode_ack, encode_data, encode_feedback)

# field by field: type, frame, frag, count, subflow, seq, ifd, capture, probe, paylen, payload
GOLDEN_DATA = bytes.fromhex(
    "00" "00000007" "0002" "0009" "01" "0000012c" "000005dc" "00000000075bcd15" "01" "0002" "6162")
# type, subflow, seq, frame, frag, iat, first, recv_ts, echo_capture
GOLDEN_ACK = bytes.fromhex(
    "01" "01" "0000012c" "00000007" "0002" "00002ee0" "00" "000000003ade68b1" "00000000075bcd15")
GOLDEN_FEEDBACK = bytes.fromhex("02" "00000005" "00" "00000004")


def test_header_is_29_bytes_and_mtu_leaves_1371():
    assert DATA_HEADER_SIZE == 1 + 4 + 2 + 2 + 1 + 4 + 4 + 8 + 1 + 2
    assert WireConfig(1400).max_payload == 1371


def test_golden_data_image():
    pkt = DataPacket(7, 2, 9, 1, 300, 1500, 123456789, True, b"ab")
    assert encode_data(pkt) == GOLDEN_DATA
    assert decode_data(GOLDEN_DATA) == pkt


def test_golden_ack_image():
    ack = AckPacket(1, 300, 7, 2, 12000, 987654321, 123456789, False)
    assert encode_ack(ack) == GOLDEN_ACK
    assert len(GOLDEN_ACK) == ACK_SIZE
    assert decode_ack(GOLDEN_ACK) == ack


def test_golden_feedback_image():
    assert encode_feedback(Feedback(5, False, 4)) == GOLDEN_FEEDBACK
    assert decode_feedback(encode_feedback(Feedback(0, False, -1))).decode_state_id == -1


def test_payload_limit():
    encode_data(DataPacket(0, 0, 1, 0, 0, 0, 0, payload=bytes(1371)))
    with pytest.raises(PayloadTooLarge):
        encode_data(DataPacket(0, 0, 1, 0, 0, 0, 0, payload=bytes(1372)))


@pytest.mark.parametrize("decode", [decode_data, decode_ack, decode_feedback])
def test_empty_buffer_is_truncated(decode):
    with pytest.raises(Truncated):
        decode(b"")


def test_wrong_type_octets():
    with pytest.raises(BadType):
        decode_data(GOLDEN_ACK)
    with pytest.raises(BadType):
        decode_ack(GOLDEN_DATA)
    with pytest.raises(BadType):
        decode_feedback(GOLDEN_DATA)


def test_short_buffers():
    with pytest.raises(Truncated):
        decode_data(GOLDEN_DATA[:20])
    with pytest.raises(Truncated):
        decode_data(GOLDEN_DATA[:-1])  # payload shorter than declared
    with pytest.raises(Truncated):
        decode_ack(GOLDEN_ACK[:-1])


def test_probe_flag_survives():
    p = DataPacket(1, 0, 2, 0, 5, 0, 10, is_probe=True, payload=b"x")
    assert decode_data(encode_data(p)).is_probe


def test_fragment_index_checked():
    with pytest.raises(ValueError):
        DataPacket(0, 3, 3, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        DataPacket(0, 0, 0, 0, 0, 0, 0)


u8, u16, u32, u64 = (st.integers(0, 2**b - 1) for b in (8, 16, 32, 64))


@st.composite
def data_packets(draw, mtu=1400):
    count = draw(st.integers(1, 2**16 - 1))
    return DataPacket(draw(u32), draw(st.integers(0, count - 1)), count, draw(u8), draw(u32),
                      draw(u32), draw(u64), draw(st.booleans()),
                      draw(st.binary(max_size=mtu - DATA_HEADER_SIZE)))


@given(data_packets())
def test_data_roundtrip(p):
    buf = encode_data(p)
    assert len(buf) <= 1400
    assert decode_data(buf) == p
    assert encode_data(p) == buf


@given(st.builds(AckPacket, u8, u32, u32, u16, u32, u64, u64, st.booleans()))
def test_ack_roundtrip(a):
    assert decode_ack(encode_ack(a)) == a


@given(st.builds(Feedback, u32, st.booleans(), st.integers(-1, 2**31 - 1)))
def test_feedback_roundtrip(f):
    assert decode_feedback(encode_feedback(f)) == f


@given(st.integers(30, 9000), st.data())
def test_never_exceeds_mtu(mtu, data):
    p = data.draw(data_packets(mtu))
    assert len(encode_data(p, WireConfig(mtu))) <= mtu
