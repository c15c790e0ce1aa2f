"""Replay-fidelity experiment: does a propagation-delay step survive replay?

A link with a mid-trace delay step is replayed under two send patterns, a
bulk sender paced at link rate and an on-off sender emitting short bursts.
Each packet's OWD is compared with the pre-step baseline for its position
in the burst. Two replay modes are offered: per-cycle delay (``cellnem``)
and delay folded into the opportunity timeline (``cellsim``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..wire import DEFAULT_MTU
from .link import FORWARD, EmulatedLink
from .trace import CellNemTrace, fold_propagation

MODES = ("cellnem", "cellsim")
SENDERS = ("bulk", "onoff")


@dataclass
class FidelityScenario:
    rate_mbps: float = 6.0
    pd_before_us: int = 10_000
    pd_after_us: int = 30_000
    step_at_ms: float = 2000.0
    end_ms: float = 4000.0
    burst_packets: int = 3
    burst_period_ms: float = 100.0
    # bursts sit mid-period relative to the step so none straddles it
    burst_phase_ms: float = 50.0
    mtu_bytes: int = DEFAULT_MTU

    @property
    def step_us(self) -> int:
        return self.pd_after_us - self.pd_before_us

    def trace(self) -> CellNemTrace:
        # imported here: the traces module itself depends on this package
        from ..traces import CycleSpec, TraceSpec, synth_trace
        return synth_trace(TraceSpec([
            CycleSpec(self.rate_mbps, self.pd_before_us, self.step_at_ms),
            CycleSpec(self.rate_mbps, self.pd_after_us, self.end_ms - self.step_at_ms),
        ], self.mtu_bytes))

    def send_times(self, sender: str) -> np.ndarray:
        end = int(self.end_ms * 1000)
        if sender == "bulk":
            gap = self.mtu_bytes * 8 / self.rate_mbps
            return np.floor(np.arange(0, end / gap) * gap).astype(np.int64)
        if sender == "onoff":
            starts = np.arange(self.burst_phase_ms * 1000, end, self.burst_period_ms * 1000)
            return np.repeat(starts.astype(np.int64), self.burst_packets)
        raise ValueError(f"unknown sender {sender!r}")

    def burst_position(self, sender: str) -> np.ndarray:
        n = len(self.send_times(sender))
        if sender == "onoff":
            return np.arange(n) % self.burst_packets
        return np.zeros(n, dtype=np.int64)


@dataclass
class FidelityResult:
    sender: str
    mode: str
    send_us: np.ndarray
    owd_us: np.ndarray
    elevation_us: np.ndarray
    post_step: np.ndarray
    burst_position: np.ndarray

    def post_elevations(self) -> np.ndarray:
        return self.elevation_us[self.post_step]

    def elevated_count(self, threshold_us: float) -> int:
        return int(np.sum(self.post_elevations() > threshold_us))

    def rows(self):
        for s, o, e, p in zip(self.send_us, self.owd_us, self.elevation_us, self.post_step):
            yield int(s), int(o), float(e), int(p)


def replay_owds(trace: CellNemTrace, sends: np.ndarray, mode: str,
                mtu_bytes: int = DEFAULT_MTU) -> np.ndarray:
    if mode == "cellnem":
        link = EmulatedLink(trace)
    elif mode == "cellsim":
        link = EmulatedLink(fold_propagation(trace), pd_us=trace.cycles[0].pd_us)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = np.empty(len(sends), dtype=np.int64)
    for i, s in enumerate(sends):
        t = link.send(FORWARD, i, int(s), mtu_bytes)
        out[i] = t - s
    return out


def run_fidelity(scenario: FidelityScenario, sender: str, mode: str) -> FidelityResult:
    sends = scenario.send_times(sender)
    pos = scenario.burst_position(sender)
    owd = replay_owds(scenario.trace(), sends, mode, scenario.mtu_bytes)
    post = sends >= int(scenario.step_at_ms * 1000)
    base = np.zeros(int(pos.max()) + 1 if len(pos) else 0)
    for p in range(len(base)):
        base[p] = np.median(owd[~post & (pos == p)])
    return FidelityResult(sender, mode, sends, owd, owd - base[pos], post, pos)
