"""Per-path estimator: inter-arrival EWMA, windowed min RTT, in-flight
accounting and the delay-bounded congestion window."""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .wire import AckPacket

DEFAULT_DELTA_US = 100_000
DEFAULT_ALPHA = 0.1
SEED_IAT_US = 10_000.0
SEED_RTT_US = 40_000
RTT_WINDOW_US = 1_000_000
UNACKED_HORIZON_US = 30_000_000
MIN_EWMA_US = 1.0


class NoSample(LookupError):
    pass


def receiver_iat(recv_ts_us: Optional[int], prev_recv_ts_us: Optional[int],
                 inter_frame_delay_us: int) -> tuple[int, bool]:
    """Inter-arrival time of a packet corrected for the sender's pause.

    Returns ``(iat_us, first)``. ``first`` is True when there is no previous
    packet on the subflow, in which case ``iat_us`` is 0 and carries no
    information. Negative values clamp to 0.
    """
    if prev_recv_ts_us is None:
        return 0, True
    return max(0, (recv_ts_us - prev_recv_ts_us) - inter_frame_delay_us), False


class MinRttWindow:
    """Sliding-window minimum over timestamped samples (monotonic deque)."""

    def __init__(self, window_us: int = RTT_WINDOW_US):
        self.window_us = window_us
        self._q: deque[tuple[int, float]] = deque()
        self._fallback: Optional[float] = None

    def push(self, ts_us: int, rtt_us: float) -> None:
        q = self._q
        while q and q[-1][1] >= rtt_us:
            q.pop()
        q.append((ts_us, rtt_us))

    def prune(self, now_us: int) -> None:
        q = self._q
        while q and now_us - q[0][0] > self.window_us:
            ts, rtt = q.popleft()
            if not q:
                self._fallback = rtt

    def samples(self) -> list[tuple[int, float]]:
        return list(self._q)

    def min(self) -> Optional[float]:
        """Minimum in the window; the last sample seen once the window empties."""
        if self._q:
            return self._q[0][1]
        return self._fallback

    def __len__(self) -> int:
        return len(self._q)


@dataclass
class _Sent:
    send_ts_us: int
    deadline_us: int
    counted: bool = True
    paired: bool = False


class SubflowState:
    """Sender-side view of one path.

    ``cwnd`` follows ``(delta - min_rtt/2) / iat``. While packets are
    unacknowledged, the iat used is at least the time the path has been
    silent beyond its expected return, so a dead path loses its window
    without waiting for an ACK that will not come.
    """

    def __init__(self, subflow_id: int, delta_us: int = DEFAULT_DELTA_US,
                 alpha: float = DEFAULT_ALPHA, seed_iat_us: float = SEED_IAT_US,
                 seed_rtt_us: int = SEED_RTT_US, max_iat_sample_us: Optional[int] = None):
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        self.subflow_id = subflow_id
        self.delta_us = delta_us
        self.alpha = alpha
        self.ewma_iat_us = float(seed_iat_us)
        self.seed_rtt_us = seed_rtt_us
        self.max_iat_sample_us = delta_us if max_iat_sample_us is None else max_iat_sample_us
        self.min_rtt_window = MinRttWindow()
        self.in_flight = 0
        self.next_seq = 0
        self.last_send_ts_us: Optional[int] = None
        self.last_ack_ts_us: Optional[int] = None
        self.busy_until_us = 0.0
        self.iat_samples = 0
        # back-to-back spacing, fed only by packets that left together with
        # their predecessor; sizes the idle estimate below
        self.dispersion_us: Optional[float] = None
        self._unacked: dict[int, _Sent] = {}
        self._order: deque[int] = deque()
        self._deadlines: list[tuple[int, int]] = []

    # -- sending -----------------------------------------------------------

    def on_send(self, now_us: int, deadline_us: int) -> tuple[int, int]:
        """Allocate a sequence number for a packet leaving now.

        Returns ``(seq_no, idle_us)`` where ``idle_us`` estimates how long the
        path sat idle before this packet; it travels in the packet header so
        the receiver can discount sender pauses from the arrival gap.
        """
        seq = self.next_seq
        self.next_seq += 1
        idle = max(0.0, now_us - self.busy_until_us) if self.last_send_ts_us is not None else 0.0
        paired = self.last_send_ts_us == now_us
        self.busy_until_us = max(self.busy_until_us, now_us) + self.service_estimate_us
        self.last_send_ts_us = now_us
        self._unacked[seq] = _Sent(now_us, deadline_us, paired=paired)
        self._order.append(seq)
        heapq.heappush(self._deadlines, (deadline_us, seq))
        self.in_flight += 1
        return seq, int(idle)

    def expire(self, now_us: int) -> int:
        """Stop counting packets whose frame deadline has passed. Returns how many."""
        n = 0
        dl = self._deadlines
        while dl and dl[0][0] <= now_us:
            _, seq = heapq.heappop(dl)
            rec = self._unacked.get(seq)
            if rec is not None and rec.counted:
                rec.counted = False
                self.in_flight -= 1
                n += 1
        return n

    # -- feedback ------------------------------------------------------------

    def on_ack(self, ack: AckPacket, now_us: int) -> bool:
        """Fold an ACK into the estimates. Returns False for unknown/duplicate seqs."""
        if ack.subflow_id != self.subflow_id:
            raise ValueError(f"ack for subflow {ack.subflow_id} routed to {self.subflow_id}")
        rec = self._unacked.pop(ack.seq_no, None)
        if rec is None:
            self.min_rtt_window.prune(now_us)
            return False
        if rec.counted:
            self.in_flight -= 1
        if not ack.first_sample:
            sample = min(ack.iat_us, self.max_iat_sample_us)
            a = self.alpha
            self.ewma_iat_us = max(MIN_EWMA_US, (1 - a) * self.ewma_iat_us + a * sample)
            self.iat_samples += 1
            if rec.paired:
                d = self.dispersion_us
                self.dispersion_us = float(sample) if d is None else (1 - a) * d + a * sample
        self.min_rtt_window.push(now_us, now_us - rec.send_ts_us)
        self.min_rtt_window.prune(now_us)
        if self.last_ack_ts_us is None or now_us > self.last_ack_ts_us:
            self.last_ack_ts_us = now_us
        self._trim(now_us)
        return True

    def _trim(self, now_us: int) -> None:
        order, unacked = self._order, self._unacked
        while order:
            seq = order[0]
            rec = unacked.get(seq)
            if rec is None:
                order.popleft()
            elif now_us - rec.send_ts_us > UNACKED_HORIZON_US:
                order.popleft()
                del unacked[seq]
                if rec.counted:
                    self.in_flight -= 1
            else:
                break

    @property
    def service_estimate_us(self) -> float:
        """Per-packet busy time assumed when estimating sender idle periods.

        Deriving it from the smoothed iat itself leaves any value self-consistent,
        because an overestimated busy period inflates the next sample by as much
        as the back-to-back samples deflate it. Pair spacing has no such loop.
        """
        d = self.dispersion_us
        return self.ewma_iat_us if d is None else max(MIN_EWMA_US, d)

    def oldest_unacked_send_us(self) -> Optional[int]:
        order, unacked = self._order, self._unacked
        while order and order[0] not in unacked:
            order.popleft()
        return unacked[order[0]].send_ts_us if order else None

    def is_outstanding(self, seq_no: int) -> bool:
        rec = self._unacked.get(seq_no)
        return rec is not None and rec.counted

    # -- estimates -------------------------------------------------------------

    def min_rtt_us(self, now_us: Optional[int] = None) -> float:
        if now_us is not None:
            self.min_rtt_window.prune(now_us)
        m = self.min_rtt_window.min()
        return float(self.seed_rtt_us) if m is None else m

    def owd_estimate(self, now_us: Optional[int] = None) -> float:
        if now_us is not None:
            self.min_rtt_window.prune(now_us)
        m = self.min_rtt_window.min()
        if m is None:
            raise NoSample(f"no RTT sample on subflow {self.subflow_id}")
        return m / 2

    def owd_or_seed(self, now_us: Optional[int] = None) -> float:
        return self.min_rtt_us(now_us) / 2

    def effective_iat_us(self, now_us: int) -> float:
        iat = self.ewma_iat_us
        oldest = self.oldest_unacked_send_us()
        if oldest is None:
            return iat
        ref = oldest + self.min_rtt_us(now_us)
        if self.last_ack_ts_us is not None:
            ref = max(ref, self.last_ack_ts_us)
        return max(iat, now_us - ref)

    def cwnd(self, now_us: int) -> int:
        return cwnd_packets(self.delta_us, self.min_rtt_us(now_us), self.effective_iat_us(now_us))

    def probe_interval_us(self, now_us: int) -> float:
        """How long the path may go without traffic before it is probed."""
        return min(1_000_000.0, 2.0 * self.effective_iat_us(now_us))

    def __repr__(self) -> str:
        return (f"SubflowState(id={self.subflow_id}, ewma_iat={self.ewma_iat_us:.0f}us, "
                f"min_rtt={self.min_rtt_us():.0f}us, in_flight={self.in_flight})")


def cwnd_packets(delta_us: float, min_rtt_us: float, iat_us: float) -> int:
    budget = delta_us - min_rtt_us / 2
    if budget <= 0:
        return 0
    return max(0, math.floor(budget / iat_us))
