"""Synthetic stand-in for a frame-by-frame adaptive video codec.

The encoder emits frames whose byte size follows the commanded target and
keeps a small model of decoder state: frames are encoded against the last
state the decoder confirmed, and missing or partial feedback sends the
encoder into loss recovery until a frame encoded after the loss is
confirmed complete.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .sender import FrameJob
from .subflow import DEFAULT_DELTA_US
from .wire import DEFAULT_MTU, Feedback, WireConfig

MIN_FRAME_BYTES = 500
MAX_FRAME_BYTES = 250_000
RECOVERY_HORIZON = 2


def fragment(data: bytes, mtu_payload: int) -> list[bytes]:
    if not data:
        return [b""]
    return [data[i:i + mtu_payload] for i in range(0, len(data), mtu_payload)]


def frame_payload(seed: int, frame_no: int, size: int) -> bytes:
    return np.random.default_rng([seed, frame_no]).bytes(size)


@dataclass
class EncoderShim:
    fps: float = 30.0
    min_frame_bytes: int = MIN_FRAME_BYTES
    max_frame_bytes: int = MAX_FRAME_BYTES
    mtu_bytes: int = DEFAULT_MTU
    delta_us: int = DEFAULT_DELTA_US
    seed: int = 0
    target_size_bytes: int = 0
    state_id: int = -1
    recovery: bool = False
    recovery_entries: int = 0
    next_frame_no: int = 0
    pending_states: dict[int, int] = field(default_factory=dict)
    _recovery_from: int = 0
    _seen: set = field(default_factory=set)
    _last_capture_us: Optional[int] = None

    @property
    def frame_interval_us(self) -> int:
        return round(1_000_000 / self.fps)

    @property
    def mtu_payload(self) -> int:
        return WireConfig(self.mtu_bytes).max_payload

    def capture_time(self, frame_no: int) -> int:
        return frame_no * self.frame_interval_us

    def frame_size(self) -> int:
        return min(self.max_frame_bytes, max(self.min_frame_bytes, self.target_size_bytes))

    def next_frame(self, now_us: int) -> FrameJob:
        n = self.next_frame_no
        self.next_frame_no += 1
        size = self.frame_size()
        # the shim emits a frame instantly, so the whole interval is pause
        ifd = 0 if self._last_capture_us is None else now_us - self._last_capture_us
        self._last_capture_us = now_us
        self.pending_states[n] = self.state_id
        return FrameJob(
            frame_no=n,
            capture_ts_us=now_us,
            deadline_us=now_us + self.delta_us,
            fragments=fragment(frame_payload(self.seed, n, size), self.mtu_payload),
            inter_frame_delay_us=ifd,
            ref_state_id=self.state_id,
        )

    def on_feedback(self, fb: Feedback) -> None:
        if fb.frame_no in self._seen:
            return
        self._seen.add(fb.frame_no)
        self.pending_states.pop(fb.frame_no, None)
        missing = [k for k in self.pending_states if k <= fb.frame_no - RECOVERY_HORIZON]
        for k in missing:
            del self.pending_states[k]
        if not fb.complete or missing:
            self._enter_recovery()
        elif self.recovery:
            if fb.frame_no >= self._recovery_from:
                self.recovery = False
                self.state_id = fb.frame_no
        else:
            self.state_id = max(self.state_id, fb.frame_no)

    def _enter_recovery(self) -> None:
        if not self.recovery:
            self.recovery = True
            self.recovery_entries += 1
        self._recovery_from = self.next_frame_no


@dataclass
class DecoderShim:
    last_decoded_frame_no: int = -1
    state_id: int = -1

    def decode(self, frame_no: int, complete: bool) -> Feedback:
        if frame_no <= self.last_decoded_frame_no:
            raise ValueError(f"frame {frame_no} after {self.last_decoded_frame_no}")
        self.last_decoded_frame_no = frame_no
        if complete:
            self.state_id = frame_no
        return Feedback(frame_no, complete, self.state_id)


def quality_proxy(delivered_bytes: int, complete: bool, fraction: float = 1.0,
                  min_frame_bytes: int = MIN_FRAME_BYTES) -> float:
    """Log-bitrate score standing in for perceptual quality.

    ``fraction`` is the share of fragments received; dropped frames score 0.
    """
    if delivered_bytes <= 0:
        return 0.0
    score = math.log2(1 + delivered_bytes / min_frame_bytes)
    return score if complete else score * fraction
