"""Trace-driven link replay.

Each packet is held for the propagation delay of the cycle it was sent in,
then joins a FIFO served by the trace's delivery opportunities. An
opportunity with nothing waiting is wasted. By default each opportunity
carries at most one datagram regardless of size; ``op_bytes`` switches to
byte accounting where small datagrams share an opportunity.
"""
from __future__ import annotations

import time
from bisect import bisect_left
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Optional, Union


from .trace import CellNemTrace, LinkTrace

FORWARD = "fwd"
REVERSE = "rev"


class Direction(str, Enum):
    FORWARD = FORWARD
    REVERSE = REVERSE


@dataclass
class Delivery:
    time_us: int
    direction: str
    packet: Any
    send_ts_us: int
    eligible_us: int
    size: int

    @property
    def owd_us(self) -> int:
        return self.time_us - self.send_ts_us


class Replay:
    """One direction of an emulated link."""

    def __init__(self, trace: Union[CellNemTrace, LinkTrace], pd_us: int = 0,
                 op_bytes: Optional[int] = None, queue_cap_bytes: Optional[int] = None,
                 name: str = FORWARD):
        self.name = name
        if isinstance(trace, LinkTrace):
            trace = trace.as_cycles(pd_us)
        self.trace = trace
        self._ops, self._starts, self._pds = trace.flatten()
        self._ops_list = self._ops.tolist()
        self._starts_list = self._starts.tolist()
        self._period = trace.duration_us
        self._n = len(self._ops_list)
        self.op_bytes = op_bytes
        self.queue_cap_bytes = queue_cap_bytes
        self._last_op = -1
        self._credit = 0
        self._last_eligible = -(1 << 62)
        self._queued: deque[tuple[int, int]] = deque()  # (delivery time, size) for the cap
        self.pending: deque[Delivery] = deque()
        self.sent = 0
        self.dropped = 0
        self.stuck = 0

    def op_time(self, j: int) -> int:
        loop, i = divmod(j, self._n)
        return self._ops_list[i] + loop * self._period

    def first_op_at_or_after(self, t: int) -> Optional[int]:
        if self._n == 0:
            return None
        loop = max(0, t // self._period)
        i = bisect_left(self._ops_list, t - loop * self._period)
        if i == self._n:
            loop, i = loop + 1, 0
            i = bisect_left(self._ops_list, t - loop * self._period)
        return loop * self._n + i

    def pd_at(self, t: int) -> int:
        pos = t % self._period
        k = bisect_left(self._starts_list, pos + 1) - 1
        return int(self._pds[k])

    def send(self, packet: Any, now_us: int, size: int) -> Optional[int]:
        """Enqueue a packet; returns its delivery time, or None if it never arrives."""
        self.sent += 1
        eligible = max(now_us + self.pd_at(now_us), self._last_eligible)
        self._last_eligible = eligible
        if self.queue_cap_bytes is not None:
            q = self._queued
            while q and q[0][0] <= eligible:
                q.popleft()
            if sum(s for _, s in q) + size > self.queue_cap_bytes:
                self.dropped += 1
                return None
        j = self.first_op_at_or_after(eligible)
        if j is None:
            self.stuck += 1
            return None
        if self.op_bytes is None:
            j = max(j, self._last_op + 1)
        else:
            if self._last_op >= 0 and self._credit > 0 and self.op_time(self._last_op) >= eligible:
                j, credit = self._last_op, self._credit
            else:
                j, credit = max(j, self._last_op + 1), self.op_bytes
            remaining = size
            while remaining > credit:
                remaining -= credit
                j += 1
                credit = self.op_bytes
            self._credit = credit - remaining
        self._last_op = j
        t = self.op_time(j)
        if self.queue_cap_bytes is not None:
            self._queued.append((t, size))
        self.pending.append(Delivery(t, self.name, packet, now_us, eligible, size))
        return t

    def next_time(self) -> Optional[int]:
        return self.pending[0].time_us if self.pending else None

    def pop_until(self, until_us: int) -> list[Delivery]:
        out = []
        p = self.pending
        while p and p[0].time_us <= until_us:
            out.append(p.popleft())
        return out


class EmulatedLink:
    """A bidirectional path: forward and reverse replays plus delivery order."""

    def __init__(self, forward: Union[CellNemTrace, LinkTrace],
                 reverse: Union[CellNemTrace, LinkTrace, None] = None, pd_us: int = 0,
                 op_bytes: Optional[int] = None, queue_cap_bytes: Optional[int] = None):
        self.fwd = Replay(forward, pd_us, op_bytes, queue_cap_bytes, FORWARD)
        self.rev = Replay(reverse if reverse is not None else forward, pd_us, op_bytes,
                          queue_cap_bytes, REVERSE)
        self._clock = 0

    def direction(self, d: str) -> Replay:
        return self.fwd if d == FORWARD else self.rev

    def send(self, direction: str, packet: Any, now_us: int, size: int = 1400) -> Optional[int]:
        return self.direction(direction).send(packet, now_us, size)

    def next_time(self) -> Optional[int]:
        ts = [t for t in (self.fwd.next_time(), self.rev.next_time()) if t is not None]
        return min(ts) if ts else None

    def step(self, until_us: int) -> list[Delivery]:
        """All deliveries with timestamp <= until_us, in time order."""
        if until_us < self._clock:
            raise ValueError(f"step to {until_us} before current time {self._clock}")
        self._clock = until_us
        out = self.fwd.pop_until(until_us) + self.rev.pop_until(until_us)
        out.sort(key=lambda d: (d.time_us, d.direction != FORWARD))
        return out


def send(link: EmulatedLink, direction: str, packet: Any, now_us: int, size: int = 1400):
    return link.send(direction, packet, now_us, size)


def step(link: EmulatedLink, until_us: int) -> list[Delivery]:
    return link.step(until_us)


class RealtimePump:
    """Drive an emulated link from the wall clock.

    Times passed to ``send`` and reported in deliveries are microseconds since
    the pump started; ``run`` sleeps until each delivery is due and hands it
    to the callback.
    """

    def __init__(self, link: EmulatedLink, on_delivery: Callable[[Delivery], None],
                 clock: Callable[[], float] = time.monotonic, sleep=time.sleep):
        self.link = link
        self.on_delivery = on_delivery
        self._clock = clock
        self._sleep = sleep
        self._t0 = clock()

    def now_us(self) -> int:
        return int((self._clock() - self._t0) * 1_000_000)

    def send(self, direction: str, packet: Any, size: int = 1400) -> Optional[int]:
        return self.link.send(direction, packet, self.now_us(), size)

    def run(self, duration_us: int) -> None:
        end = duration_us
        while True:
            now = self.now_us()
            if now >= end:
                break
            for d in self.link.step(max(now, self.link._clock)):
                self.on_delivery(d)
            nxt = self.link.next_time()
            wake = end if nxt is None else min(nxt, end)
            self._sleep(max(0.0, (wake - self.now_us()) / 1_000_000))
        for d in self.link.step(max(end, self.link._clock)):
            self.on_delivery(d)
