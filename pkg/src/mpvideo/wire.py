"""Datagram layouts exchanged between the sender and receiver programs.

Every datagram starts with a one-octet type tag followed by fixed-width
big-endian fields::

    DATA     type frame frag count subflow seq ifd capture probe paylen payload
             B    I     H    H     B       I   I   Q       B     H
    ACK      type subflow seq frame frag iat first recv_ts echo_capture
             B    B       I   I     H    I   B     Q       Q
    FEEDBACK type frame complete state
             B    I     B        i

The feedback state is signed because it is -1 before anything decodes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

TYPE_DATA = 0
TYPE_ACK = 1
TYPE_FEEDBACK = 2

DEFAULT_MTU = 1400

_DATA_HDR = struct.Struct(">BIHHBIIQBH")
_ACK = struct.Struct(">BBIIHIBQQ")
_FEEDBACK = struct.Struct(">BIBi")

DATA_HEADER_SIZE = _DATA_HDR.size  # 29
ACK_SIZE = _ACK.size  # 33
FEEDBACK_SIZE = _FEEDBACK.size  # 10


class WireError(ValueError):
    pass


class PayloadTooLarge(WireError):
    pass


class Truncated(WireError):
    pass


class BadType(WireError):
    pass


@dataclass(frozen=True)
class WireConfig:
    mtu_bytes: int = DEFAULT_MTU

    def __post_init__(self):
        if self.mtu_bytes <= DATA_HEADER_SIZE:
            raise ValueError(f"mtu_bytes must exceed the {DATA_HEADER_SIZE}-byte header")

    @property
    def max_payload(self) -> int:
        return self.mtu_bytes - DATA_HEADER_SIZE


@dataclass(frozen=True)
class DataPacket:
    frame_no: int
    frag_no: int
    frag_count: int
    subflow_id: int
    seq_no: int
    inter_frame_delay_us: int
    capture_ts_us: int
    is_probe: bool = False
    payload: bytes = b""

    def __post_init__(self):
        if self.frag_count < 1 or not 0 <= self.frag_no < self.frag_count:
            raise ValueError(f"bad fragment {self.frag_no}/{self.frag_count}")

    @property
    def wire_size(self) -> int:
        return DATA_HEADER_SIZE + len(self.payload)


@dataclass(frozen=True)
class AckPacket:
    subflow_id: int
    seq_no: int
    frame_no: int
    frag_no: int
    iat_us: int
    receiver_ts_us: int
    echo_capture_ts_us: int
    first_sample: bool = False

    wire_size = ACK_SIZE


@dataclass(frozen=True)
class Feedback:
    """Decoder feedback relayed from receiver to the sender's encoder."""

    frame_no: int
    complete: bool
    decode_state_id: int

    wire_size = FEEDBACK_SIZE


def encode_data(pkt: DataPacket, cfg: WireConfig = WireConfig()) -> bytes:
    size = DATA_HEADER_SIZE + len(pkt.payload)
    if size > cfg.mtu_bytes:
        raise PayloadTooLarge(f"{size} bytes exceeds mtu {cfg.mtu_bytes}")
    header = _DATA_HDR.pack(
        TYPE_DATA,
        pkt.frame_no,
        pkt.frag_no,
        pkt.frag_count,
        pkt.subflow_id,
        pkt.seq_no,
        pkt.inter_frame_delay_us,
        pkt.capture_ts_us,
        1 if pkt.is_probe else 0,
        len(pkt.payload),
    )
    return header + bytes(pkt.payload)


def _check_type(buf: bytes, expected: int) -> None:
    if len(buf) < 1:
        raise Truncated("empty datagram")
    if buf[0] != expected:
        raise BadType(f"type octet {buf[0]}, expected {expected}")


def decode_data(buf: bytes, cfg: WireConfig = WireConfig()) -> DataPacket:
    _check_type(buf, TYPE_DATA)
    if len(buf) < DATA_HEADER_SIZE:
        raise Truncated(f"{len(buf)} bytes is shorter than the data header")
    (_, frame_no, frag_no, frag_count, subflow_id, seq_no, ifd, capture, probe,
     paylen) = _DATA_HDR.unpack_from(buf)
    end = DATA_HEADER_SIZE + paylen
    if len(buf) < end:
        raise Truncated(f"declared payload {paylen} bytes, have {len(buf) - DATA_HEADER_SIZE}")
    return DataPacket(
        frame_no=frame_no,
        frag_no=frag_no,
        frag_count=frag_count,
        subflow_id=subflow_id,
        seq_no=seq_no,
        inter_frame_delay_us=ifd,
        capture_ts_us=capture,
        is_probe=bool(probe),
        payload=bytes(buf[DATA_HEADER_SIZE:end]),
    )


def encode_ack(ack: AckPacket, cfg: WireConfig = WireConfig()) -> bytes:
    if ACK_SIZE > cfg.mtu_bytes:
        raise PayloadTooLarge(f"ack of {ACK_SIZE} bytes exceeds mtu {cfg.mtu_bytes}")
    return _ACK.pack(
        TYPE_ACK,
        ack.subflow_id,
        ack.seq_no,
        ack.frame_no,
        ack.frag_no,
        ack.iat_us,
        1 if ack.first_sample else 0,
        ack.receiver_ts_us,
        ack.echo_capture_ts_us,
    )


def decode_ack(buf: bytes, cfg: WireConfig = WireConfig()) -> AckPacket:
    _check_type(buf, TYPE_ACK)
    if len(buf) < ACK_SIZE:
        raise Truncated(f"{len(buf)} bytes is shorter than an ack")
    _, subflow_id, seq_no, frame_no, frag_no, iat, first, recv_ts, echo = _ACK.unpack_from(buf)
    return AckPacket(
        subflow_id=subflow_id,
        seq_no=seq_no,
        frame_no=frame_no,
        frag_no=frag_no,
        iat_us=iat,
        receiver_ts_us=recv_ts,
        echo_capture_ts_us=echo,
        first_sample=bool(first),
    )


def encode_feedback(fb: Feedback) -> bytes:
    return _FEEDBACK.pack(TYPE_FEEDBACK, fb.frame_no, 1 if fb.complete else 0, fb.decode_state_id)


def decode_feedback(buf: bytes) -> Feedback:
    _check_type(buf, TYPE_FEEDBACK)
    if len(buf) < FEEDBACK_SIZE:
        raise Truncated(f"{len(buf)} bytes is shorter than a feedback message")
    _, frame_no, complete, state = _FEEDBACK.unpack_from(buf)
    return Feedback(frame_no, bool(complete), state)
