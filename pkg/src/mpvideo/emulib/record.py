"""Two-phase trace recording against a path under test.

Each cycle saturates the forward direction for ``cycle_s`` while a far-end
agent logs arrival times, waits for the queue to drain (ACK of the last
packet or a timeout), then sends small probes until the cycle's record slot
ends and keeps the smallest probe OWD as that cycle's propagation delay.
A record slot is twice the saturation length, so the trace replays in half
the time it took to record.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .link import FORWARD, REVERSE, EmulatedLink
from .trace import CellNemTrace, Cycle

ACK_BYTES = 40


class DrainTimeout(RuntimeWarning):
    """Marks a cycle whose queue did not drain in time (reported, not raised)."""


@dataclass
class RecordConfig:
    cycles: int = 4
    cycle_s: float = 5.0
    probe_interval_ms: float = 100.0
    probe_bytes: int = 50
    drain_timeout_ms: float = 1000.0
    mtu_bytes: int = 1400
    ack_every: int = 4
    delay_target_ms: float = 100.0
    initial_window: int = 4

    @property
    def slot_us(self) -> int:
        return int(round(2 * self.cycle_s * 1e6))


@dataclass(frozen=True)
class _Data:
    cycle: int
    seq: int
    sent_us: int
    last: bool = False


@dataclass(frozen=True)
class _Probe:
    cycle: int
    sent_us: int


@dataclass(frozen=True)
class _Ack:
    cycle: int
    seq: int
    last: bool


class _Saturator:
    """ACK-clocked window: slow start, then held near a queueing-delay target."""

    def __init__(self, cfg: RecordConfig):
        self.cfg = cfg
        self.window = float(cfg.initial_window)
        self.next_seq = 0
        self.acked = -1
        self.min_rtt: Optional[int] = None
        self.slow_start = True

    @property
    def outstanding(self) -> int:
        return self.next_seq - self.acked - 1

    def on_ack(self, seq: int, rtt_us: int) -> None:
        if seq <= self.acked:
            return
        newly = seq - self.acked
        self.acked = seq
        self.min_rtt = rtt_us if self.min_rtt is None else min(self.min_rtt, rtt_us)
        queueing = rtt_us - self.min_rtt
        if queueing > self.cfg.delay_target_ms * 1000:
            self.slow_start = False
            self.window = max(2.0, self.window - newly / self.window)
        elif self.slow_start:
            self.window += newly
        else:
            self.window += newly / self.window


def record_session(link: EmulatedLink, config: Optional[RecordConfig] = None,
                   start_us: int = 0) -> CellNemTrace:
    """Record ``config.cycles`` cycles through ``link``; virtual clock starts at ``start_us``.

    A cycle in which no probe arrives inherits the previous cycle's delay.
    """
    cfg = config or RecordConfig()
    sat_us = int(round(cfg.cycle_s * 1e6))
    cycles = []
    prev_pd = 0
    for k in range(cfg.cycles):
        t0 = start_us + k * cfg.slot_us
        arrivals, probe_owds, timed_out = _record_cycle(link, cfg, k, t0, sat_us)
        pd = min(probe_owds) if probe_owds else prev_pd
        prev_pd = pd
        ops = np.asarray(arrivals, dtype=np.int64) - (t0 + pd)
        ops = np.sort(ops[(ops >= 0) & (ops < sat_us)])
        cycles.append(Cycle(k, int(pd), ops, sat_us, drain_timeout=timed_out))
    return CellNemTrace(cycles)


_SAT_END, _DRAIN_TIMEOUT, _PROBE = 0, 1, 2


def _record_cycle(link: EmulatedLink, cfg: RecordConfig, k: int, t0: int, sat_us: int):
    sat = _Saturator(cfg)
    sat_end = t0 + sat_us
    slot_end = t0 + cfg.slot_us
    probe_step = int(cfg.probe_interval_ms * 1000)
    arrivals: list[int] = []
    probe_owds: list[int] = []
    send_times: dict[int, int] = {}
    timers: list[tuple[int, int]] = [(sat_end, _SAT_END)]
    state = {"last_seq": None, "drained": False, "timed_out": False, "agent": 0}

    def fill(now_us: int) -> None:
        while now_us < sat_end and sat.outstanding < int(sat.window):
            seq = sat.next_seq
            sat.next_seq += 1
            send_times[seq] = now_us
            link.send(FORWARD, _Data(k, seq, now_us), now_us, cfg.mtu_bytes)

    def start_probing(now_us: int) -> None:
        state["drained"] = True
        heapq.heappush(timers, (now_us, _PROBE))

    fill(t0)
    while True:
        due = [x for x in (link.next_time(), timers[0][0] if timers else None) if x is not None]
        if not due or min(due) >= slot_end:
            break
        now = min(due)
        while timers and timers[0][0] <= now:
            _, kind = heapq.heappop(timers)
            if kind == _SAT_END:
                # closing packet: the agent always ACKs it
                seq = state["last_seq"] = sat.next_seq
                sat.next_seq += 1
                send_times[seq] = now
                link.send(FORWARD, _Data(k, seq, now, last=True), now, cfg.mtu_bytes)
                heapq.heappush(timers, (now + int(cfg.drain_timeout_ms * 1000), _DRAIN_TIMEOUT))
            elif kind == _DRAIN_TIMEOUT and not state["drained"]:
                state["timed_out"] = True
                start_probing(now)
            elif kind == _PROBE:
                link.send(FORWARD, _Probe(k, now), now, cfg.probe_bytes)
                if now + probe_step < slot_end:
                    heapq.heappush(timers, (now + probe_step, _PROBE))
        for d in link.step(now):
            pkt = d.packet
            if getattr(pkt, "cycle", None) != k:
                continue
            if isinstance(pkt, _Probe):
                probe_owds.append(d.time_us - pkt.sent_us)
            elif isinstance(pkt, _Data):
                arrivals.append(d.time_us)
                state["agent"] += 1
                if pkt.last or state["agent"] % cfg.ack_every == 0:
                    link.send(REVERSE, _Ack(k, pkt.seq, pkt.last), d.time_us, ACK_BYTES)
            elif isinstance(pkt, _Ack):
                sat.on_ack(pkt.seq, d.time_us - send_times[pkt.seq])
                if pkt.last and not state["drained"]:
                    start_probing(d.time_us)
                fill(d.time_us)
    return arrivals, probe_owds, state["timed_out"] or not state["drained"]
