"""Sender program: frame-size budget, min-max fragment scheduling across
subflows, the deadline-ordered outstanding queue and adaptive probing."""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .subflow import DEFAULT_DELTA_US, SubflowState
from .wire import DEFAULT_MTU, DataPacket, Feedback, WireConfig

TARGET_CWND_FRACTION = 0.8
PROBE_COPIES = 2


@dataclass
class FrameJob:
    frame_no: int
    capture_ts_us: int
    deadline_us: int
    fragments: list[bytes]
    inter_frame_delay_us: int = 0
    ref_state_id: int = -1

    def __post_init__(self):
        if self.deadline_us <= self.capture_ts_us:
            raise ValueError("deadline must follow capture")

    @property
    def size(self) -> int:
        return sum(len(f) for f in self.fragments)


@dataclass(frozen=True)
class PathEstimate:
    """Snapshot of the quantities the scheduler needs for one subflow."""

    subflow_id: int
    owd_us: float
    iat_us: float
    in_flight: int
    cwnd: int

    @property
    def capacity(self) -> int:
        return self.cwnd - min(self.in_flight, self.cwnd)


@dataclass
class Allocation:
    counts: dict[int, int]
    makespan_us: float
    unplaced: int = 0

    @property
    def placed(self) -> int:
        return sum(self.counts.values())


def finish_time(est: PathEstimate, extra: int) -> float:
    """Predicted arrival of the last packet on a path after ``extra`` more."""
    return est.owd_us + (est.in_flight + extra) * est.iat_us


def makespan(estimates: Sequence[PathEstimate], counts: dict[int, int]) -> float:
    """Latest predicted arrival over paths that carry anything.

    Paths with nothing in flight and nothing allocated do not count.
    """
    m = 0.0
    for est in estimates:
        x = counts.get(est.subflow_id, 0)
        if x > 0 or est.in_flight > 0:
            m = max(m, finish_time(est, x))
    return m


def schedule(n_fragments: int, estimates: Sequence[PathEstimate]) -> Allocation:
    """Split ``n_fragments`` unit packets over paths minimising the makespan.

    Each fragment goes to the path whose finish time after taking it is
    smallest, ties to the lower subflow id. Fragments are identical, so
    this picks the n cheapest slots overall and is exact.
    """
    order = sorted(estimates, key=lambda e: e.subflow_id)
    counts = {e.subflow_id: 0 for e in order}
    caps = {e.subflow_id: e.capacity for e in order}
    heap = [(finish_time(e, 1), e.subflow_id, i) for i, e in enumerate(order) if caps[e.subflow_id] > 0]
    heapq.heapify(heap)
    placed = 0
    while placed < n_fragments and heap:
        _, sid, i = heapq.heappop(heap)
        counts[sid] += 1
        placed += 1
        if counts[sid] < caps[sid]:
            heapq.heappush(heap, (finish_time(order[i], counts[sid] + 1), sid, i))
    counts = {k: v for k, v in counts.items() if v}
    return Allocation(counts, makespan(order, counts), n_fragments - placed)


def target_size(estimates: Iterable[PathEstimate], mtu_payload: int) -> int:
    """Bytes the encoder may spend on the next frame.

    Each path contributes ``floor(0.8 * cwnd) - in_flight`` packets, clamped
    at zero before summing.
    """
    pkts = sum(max(0, math.floor(TARGET_CWND_FRACTION * e.cwnd) - e.in_flight) for e in estimates)
    return mtu_payload * pkts


@dataclass(order=True)
class QueuedPacket:
    deadline_us: int
    order: int
    frame_no: int = field(compare=False)
    frag_no: int = field(compare=False)
    frag_count: int = field(compare=False)
    capture_ts_us: int = field(compare=False)
    payload: bytes = field(compare=False, repr=False)


class OutstandingQueue:
    """Fragments waiting for window space, earliest frame deadline first."""

    def __init__(self):
        self._heap: list[QueuedPacket] = []
        self._counter = itertools.count()

    def push(self, job: FrameJob, frag_no: int) -> None:
        heapq.heappush(self._heap, QueuedPacket(
            job.deadline_us, next(self._counter), job.frame_no, frag_no,
            len(job.fragments), job.capture_ts_us, job.fragments[frag_no]))

    def purge(self, now_us: int) -> list[QueuedPacket]:
        """Drop every queued packet of frames whose deadline has passed."""
        dropped = []
        while self._heap and self._heap[0].deadline_us <= now_us:
            dropped.append(heapq.heappop(self._heap))
        return dropped

    def pop(self) -> QueuedPacket:
        return heapq.heappop(self._heap)

    def peek(self) -> Optional[QueuedPacket]:
        return self._heap[0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)

    def __iter__(self):
        return iter(sorted(self._heap))


@dataclass
class SenderConfig:
    delta_us: int = DEFAULT_DELTA_US
    mtu_bytes: int = DEFAULT_MTU
    alpha: float = 0.1
    probing: bool = True

    @property
    def mtu_payload(self) -> int:
        return WireConfig(self.mtu_bytes).max_payload


@dataclass
class SendRecord:
    """One transmission, kept for invariant checks."""

    ts_us: int
    subflow_id: int
    seq_no: int
    frame_no: int
    deadline_us: int
    in_flight_after: int
    cwnd: int
    is_probe: bool


class Sender:
    def __init__(self, subflow_ids: Sequence[int], config: SenderConfig = SenderConfig(),
                 keep_log: bool = False):
        if not subflow_ids:
            raise ValueError("need at least one subflow")
        self.config = config
        self.subflows = {sid: SubflowState(sid, delta_us=config.delta_us, alpha=config.alpha)
                         for sid in sorted(subflow_ids)}
        self.queue = OutstandingQueue()
        self.keep_log = keep_log
        self.send_log: list[SendRecord] = []
        self.cwnd_violations = 0
        self.deadline_violations = 0
        self.dropped_packets = 0
        self.probes_sent = 0
        self.last_makespan_us = 0.0

    # -- estimates ---------------------------------------------------------------

    def _expire(self, now_us: int) -> None:
        for sf in self.subflows.values():
            sf.expire(now_us)
        self.dropped_packets += len(self.queue.purge(now_us))

    def estimate(self, sid: int, now_us: int) -> PathEstimate:
        sf = self.subflows[sid]
        return PathEstimate(sid, sf.owd_or_seed(now_us), sf.effective_iat_us(now_us),
                            sf.in_flight, sf.cwnd(now_us))

    def estimates(self, now_us: int) -> list[PathEstimate]:
        return [self.estimate(sid, now_us) for sid in self.subflows]

    def target_size(self, now_us: int) -> int:
        self._expire(now_us)
        return target_size(self.estimates(now_us), self.config.mtu_payload)

    # -- transmission ------------------------------------------------------------

    def _send(self, sid: int, now_us: int, frame_no: int, frag_no: int, frag_count: int,
              capture_ts_us: int, deadline_us: int, payload: bytes, cwnd: int,
              probe: bool = False) -> DataPacket:
        sf = self.subflows[sid]
        if deadline_us <= now_us:
            self.deadline_violations += 1
        seq, idle = sf.on_send(now_us, deadline_us)
        limit = cwnd + PROBE_COPIES if probe else cwnd
        if sf.in_flight > limit:
            self.cwnd_violations += 1
        if self.keep_log:
            self.send_log.append(SendRecord(now_us, sid, seq, frame_no, deadline_us,
                                            sf.in_flight, cwnd, probe))
        return DataPacket(frame_no, frag_no, frag_count, sid, seq, idle, capture_ts_us,
                          probe, payload)

    def drain_outstanding(self, sid: int, now_us: int) -> list[DataPacket]:
        """Send queued fragments on ``sid`` up to its free window."""
        self._expire(now_us)
        sf = self.subflows[sid]
        cwnd = sf.cwnd(now_us)
        out = []
        while len(self.queue) and sf.in_flight < cwnd:
            q = self.queue.pop()
            out.append(self._send(sid, now_us, q.frame_no, q.frag_no, q.frag_count,
                                  q.capture_ts_us, q.deadline_us, q.payload, cwnd))
        return out

    def _drain_all(self, now_us: int) -> list[DataPacket]:
        if not len(self.queue):
            return []
        ests = self.estimates(now_us)
        alloc = schedule(len(self.queue), ests)
        cwnds = {e.subflow_id: e.cwnd for e in ests}
        out = []
        for sid, x in alloc.counts.items():
            for _ in range(x):
                q = self.queue.pop()
                out.append(self._send(sid, now_us, q.frame_no, q.frag_no, q.frag_count,
                                      q.capture_ts_us, q.deadline_us, q.payload, cwnds[sid]))
        return out

    def schedule_frame(self, job: FrameJob, now_us: int) -> Allocation:
        self._expire(now_us)
        return schedule(len(job.fragments), self.estimates(now_us))

    def probe_tick(self, sid: int, job: FrameJob, now_us: int) -> list[DataPacket]:
        """Duplicate the frame's first fragments onto a path that has gone quiet."""
        sf = self.subflows[sid]
        if not job.fragments:
            return []
        idle = now_us - sf.last_send_ts_us if sf.last_send_ts_us is not None else math.inf
        if idle <= sf.probe_interval_us(now_us):
            return []
        cwnd = sf.cwnd(now_us)
        if sf.in_flight > cwnd:
            return []
        out = []
        for frag_no in range(min(PROBE_COPIES, len(job.fragments))):
            out.append(self._send(sid, now_us, job.frame_no, frag_no, len(job.fragments),
                                  job.capture_ts_us, job.deadline_us, job.fragments[frag_no],
                                  cwnd, probe=True))
        self.probes_sent += len(out)
        return out

    def on_frame(self, job: FrameJob, now_us: int) -> list[DataPacket]:
        """Hand a freshly encoded frame to the sender; returns packets to transmit."""
        self._expire(now_us)
        out = self._drain_all(now_us)
        ests = self.estimates(now_us)
        alloc = schedule(len(job.fragments), ests)
        self.last_makespan_us = alloc.makespan_us
        cwnds = {e.subflow_id: e.cwnd for e in ests}
        frag = 0
        for sid, x in alloc.counts.items():
            for _ in range(x):
                out.append(self._send(sid, now_us, job.frame_no, frag, len(job.fragments),
                                      job.capture_ts_us, job.deadline_us, job.fragments[frag],
                                      cwnds[sid]))
                frag += 1
        for f in range(frag, len(job.fragments)):
            self.queue.push(job, f)
        if self.config.probing:
            for sid in self.subflows:
                out.extend(self.probe_tick(sid, job, now_us))
        return out

    def on_ack(self, ack, now_us: int) -> list[DataPacket]:
        sf = self.subflows.get(ack.subflow_id)
        if sf is None:
            return []
        sf.on_ack(ack, now_us)
        return self.drain_outstanding(ack.subflow_id, now_us)

    def on_decoder_feedback(self, feedback: Optional[Feedback], now_us: int) -> int:
        """Replace the feedback's target size with the current multipath budget."""
        return self.target_size(now_us)
