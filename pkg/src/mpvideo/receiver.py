"""Receiver program: per-frame reassembly, in-order release with a grace
period for incomplete frames, and per-packet acknowledgements."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .subflow import DEFAULT_DELTA_US, receiver_iat
from .wire import AckPacket, DataPacket, Feedback

DEFAULT_OMEGA_US = 5_000
DEFAULT_FRAME_INTERVAL_US = 33_333


@dataclass
class FrameBuffer:
    frame_no: int
    frag_count: int
    capture_ts_us: int
    first_packet_recv_ts_us: int
    slots: list[Optional[bytes]] = field(default_factory=list)
    received_count: int = 0
    subflow_bytes: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.slots:
            self.slots = [None] * self.frag_count

    def insert(self, pkt: DataPacket) -> bool:
        if pkt.frag_no >= self.frag_count or self.slots[pkt.frag_no] is not None:
            return False
        self.slots[pkt.frag_no] = pkt.payload
        self.received_count += 1
        self.subflow_bytes[pkt.subflow_id] = self.subflow_bytes.get(pkt.subflow_id, 0) + len(pkt.payload)
        return True

    @property
    def complete(self) -> bool:
        return self.received_count == self.frag_count

    @property
    def delivered_bytes(self) -> int:
        return sum(len(s) for s in self.slots if s is not None)


@dataclass
class ReleasedFrame:
    frame_no: int
    capture_ts_us: Optional[int]
    release_ts_us: int
    complete: bool
    frag_count: int
    received_frags: int
    delivered_bytes: int
    payload: bytes = field(repr=False, default=b"")
    subflow_bytes: dict[int, int] = field(default_factory=dict)

    @property
    def dropped(self) -> bool:
        return self.received_frags == 0


class Receiver:
    def __init__(self, delta_us: int = DEFAULT_DELTA_US, omega_us: int = DEFAULT_OMEGA_US,
                 frame_interval_us: int = DEFAULT_FRAME_INTERVAL_US):
        self.delta_us = delta_us
        self.omega_us = omega_us
        self.frame_interval_us = frame_interval_us
        self.next_expected = 0
        self.buffers: dict[int, FrameBuffer] = {}
        self.last_recv: dict[int, int] = {}
        self.stale_packets = 0
        self.duplicate_packets = 0
        self._last_released: Optional[tuple[int, int]] = None  # (frame_no, capture_ts)

    def on_data(self, pkt: DataPacket, recv_ts_us: int) -> tuple[AckPacket, list[ReleasedFrame]]:
        iat, first = receiver_iat(recv_ts_us, self.last_recv.get(pkt.subflow_id),
                                  pkt.inter_frame_delay_us)
        self.last_recv[pkt.subflow_id] = recv_ts_us
        ack = AckPacket(pkt.subflow_id, pkt.seq_no, pkt.frame_no, pkt.frag_no, iat,
                        recv_ts_us, pkt.capture_ts_us, first)
        if pkt.frame_no < self.next_expected:
            self.stale_packets += 1
            return ack, self.forward_ready(recv_ts_us)
        buf = self.buffers.get(pkt.frame_no)
        if buf is None:
            buf = self.buffers[pkt.frame_no] = FrameBuffer(
                pkt.frame_no, pkt.frag_count, pkt.capture_ts_us, recv_ts_us)
        if not buf.insert(pkt):
            self.duplicate_packets += 1
        return ack, self.forward_ready(recv_ts_us)

    def capture_estimate(self, frame_no: int) -> Optional[int]:
        """Capture time of a frame, extrapolated from the nearest known one."""
        buf = self.buffers.get(frame_no)
        if buf is not None:
            return buf.capture_ts_us
        known = [(k, b.capture_ts_us) for k, b in self.buffers.items()]
        if self._last_released is not None and self._last_released[1] is not None:
            known.append(self._last_released)
        if not known:
            return None
        below = [kc for kc in known if kc[0] < frame_no]
        k, cap = max(below) if below else min(known)
        return cap + (frame_no - k) * self.frame_interval_us

    def deadline(self, frame_no: int) -> Optional[int]:
        cap = self.capture_estimate(frame_no)
        return None if cap is None else cap + self.delta_us

    def grace_instant(self) -> Optional[int]:
        """When the incomplete head-of-line frame will be released regardless."""
        d = self.deadline(self.next_expected + 1)
        return None if d is None else d - self.omega_us

    def forward_ready(self, now_us: int) -> list[ReleasedFrame]:
        out = []
        while True:
            k = self.next_expected
            buf = self.buffers.get(k)
            if buf is not None and buf.complete:
                out.append(self._release(k, now_us))
                continue
            grace = self.grace_instant()
            if grace is not None and now_us >= grace:
                out.append(self._release(k, now_us))
                continue
            return out

    def flush(self, now_us: int, upto: int) -> list[ReleasedFrame]:
        """Release every frame below ``upto`` that is still held, in order."""
        out = []
        while self.next_expected < upto:
            out.append(self._release(self.next_expected, now_us))
        return out

    def _release(self, k: int, now_us: int) -> ReleasedFrame:
        buf = self.buffers.pop(k, None)
        self.next_expected = k + 1
        if buf is None:
            cap = self.capture_estimate(k)
            self._last_released = (k, cap)
            return ReleasedFrame(k, cap, now_us, False, 0, 0, 0)
        self._last_released = (k, buf.capture_ts_us)
        return ReleasedFrame(
            frame_no=k,
            capture_ts_us=buf.capture_ts_us,
            release_ts_us=now_us,
            complete=buf.complete,
            frag_count=buf.frag_count,
            received_frags=buf.received_count,
            delivered_bytes=buf.delivered_bytes,
            payload=b"".join(s for s in buf.slots if s is not None),
            subflow_bytes=dict(buf.subflow_bytes),
        )


def emit_decoder_feedback(decoder, frame: Optional[ReleasedFrame]) -> Optional[Feedback]:
    """Run a released frame through the decoder and return its feedback."""
    if frame is None:
        return None
    return decoder.decode(frame.frame_no, frame.complete)
