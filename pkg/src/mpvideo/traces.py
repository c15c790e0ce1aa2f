"""One-way-delay analysis and synthetic trace generation.

Change detection is a penalised least-squares segmentation of the per-second
minimum OWD (optimal partitioning with PELT pruning), followed by a
significance pass that merges neighbouring runs whose means differ by less
than 2 ms.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .emulib.trace import CellNemTrace, Cycle
from .wire import DEFAULT_MTU

BIN_US = 1_000_000
SIGNIFICANT_CHANGE_US = 2_000


class EmptySeries(ValueError):
    pass


class BadSpec(ValueError):
    pass


@dataclass
class OwdSeries:
    timestamps_us: np.ndarray
    owd_us: np.ndarray

    def __post_init__(self):
        self.timestamps_us = np.asarray(self.timestamps_us, dtype=np.int64)
        self.owd_us = np.asarray(self.owd_us, dtype=np.int64)
        if self.timestamps_us.shape != self.owd_us.shape:
            raise ValueError("timestamps and owd lengths differ")
        if len(self.timestamps_us) > 1 and np.any(np.diff(self.timestamps_us) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps_us)


def read_owd_series(path) -> OwdSeries:
    ts, owd = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected '<timestamp_us> <owd_us>'")
            ts.append(int(parts[0]))
            owd.append(int(parts[1]))
    return OwdSeries(np.array(ts), np.array(owd))


def write_owd_series(series: OwdSeries, path) -> None:
    with open(path, "w") as f:
        for t, d in zip(series.timestamps_us, series.owd_us):
            f.write(f"{int(t)} {int(d)}\n")


def min_owd_bins(series: OwdSeries, bin_us: int = BIN_US) -> np.ndarray:
    """Per-bin minimum OWD in µs, bins aligned to the first sample; NaN marks an empty bin."""
    if len(series) == 0:
        raise EmptySeries("no samples")
    idx = (series.timestamps_us - series.timestamps_us[0]) // bin_us
    out = np.full(int(idx[-1]) + 1, np.inf)
    np.minimum.at(out, idx, series.owd_us.astype(np.float64))
    out[np.isinf(out)] = np.nan
    return out


# -- segmentation -------------------------------------------------------------


def _segment_cost(cs: np.ndarray, cs2: np.ndarray, s, t: int):
    n = t - s
    tot = cs[t] - cs[s]
    return (cs2[t] - cs2[s]) - tot * tot / n


def pelt(values: np.ndarray, penalty: float) -> list[int]:
    """Exact least-squares segmentation; returns segment start indices (excluding 0)."""
    y = np.asarray(values, dtype=np.float64)
    n = len(y)
    if n < 2:
        return []
    cs = np.concatenate([[0.0], np.cumsum(y)])
    cs2 = np.concatenate([[0.0], np.cumsum(y * y)])
    best = np.empty(n + 1)
    best[0] = -penalty
    last = np.zeros(n + 1, dtype=np.int64)
    cand = np.array([0], dtype=np.int64)
    for t in range(1, n + 1):
        seg = best[cand] + _segment_cost(cs, cs2, cand, t)
        k = int(np.argmin(seg))
        best[t] = seg[k] + penalty
        last[t] = cand[k]
        cand = np.append(cand[seg <= best[t]], t)
    cps = []
    t = n
    while t > 0:
        t = int(last[t])
        if t > 0:
            cps.append(t)
    return sorted(cps)


def default_penalty(values: np.ndarray) -> float:
    """BIC-style penalty with the noise scale taken from first differences."""
    y = np.asarray(values, dtype=np.float64)
    if len(y) < 3:
        return 1.0
    d = np.diff(y)
    sigma = 1.4826 * np.median(np.abs(d - np.median(d))) / np.sqrt(2)
    return max(3.0 * sigma * sigma * np.log(len(y)), 1.0)


def merge_insignificant(values: np.ndarray, starts: Sequence[int],
                        threshold: float = SIGNIFICANT_CHANGE_US) -> list[int]:
    """Drop boundaries between runs whose means differ by less than ``threshold``.

    The closest pair of neighbouring runs is merged first, then means are
    recomputed, until every remaining boundary is significant.
    """
    y = np.asarray(values, dtype=np.float64)
    bounds = [0, *sorted(starts), len(y)]
    while len(bounds) > 2:
        means = [y[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])]
        diffs = np.abs(np.diff(means))
        i = int(np.argmin(diffs))
        if diffs[i] >= threshold:
            break
        del bounds[i + 1]
    return bounds[1:-1]


@dataclass
class ChangePointReport:
    bin_size_s: float = 1.0
    change_bins: list[int] = field(default_factory=list)
    persistent_bin_lengths: list[int] = field(default_factory=list)
    run_means_us: list[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        starts = [0]
        for n in self.persistent_bin_lengths[:-1]:
            starts.append(starts[-1] + n)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["run", "start_bin", "length_bins", "mean_min_owd_us", "change"])
            changes = set(self.change_bins)
            for i, (s, n, m) in enumerate(zip(starts, self.persistent_bin_lengths, self.run_means_us)):
                w.writerow([i, s, n, f"{m:.1f}", int(s in changes)])


Segmenter = Callable[[np.ndarray], list[int]]


def detect_changes(bins: np.ndarray, threshold_us: float = SIGNIFICANT_CHANGE_US,
                   segmenter: Optional[Segmenter] = None, bin_size_s: float = 1.0) -> ChangePointReport:
    """Locate significant shifts in a per-bin minimum OWD series (µs).

    NaN bins split the series; each contiguous piece is segmented
    independently and the pieces' runs are reported in order. A run start
    counts as a change when its mean differs from the preceding run's by at
    least ``threshold_us``.
    """
    b = np.asarray(bins, dtype=np.float64)
    valid = ~np.isnan(b)
    if valid.sum() < 2:
        raise ValueError("need at least two non-gap bins")
    # integer offset keeps results identical under constant integer shifts
    offset = np.floor(b[valid][0])
    b = b - offset
    if segmenter is None:
        def segmenter(v):
            return pelt(v, default_penalty(v))
    runs: list[tuple[int, int]] = []
    i = 0
    n = len(b)
    while i < n:
        if not valid[i]:
            i += 1
            continue
        j = i
        while j < n and valid[j]:
            j += 1
        piece = b[i:j]
        cps = merge_insignificant(piece, segmenter(piece), threshold_us) if len(piece) > 1 else []
        edges = [0, *cps, len(piece)]
        runs.extend((i + a, i + e) for a, e in zip(edges[:-1], edges[1:]))
        i = j
    means = [float(np.mean(b[a:e])) for a, e in runs]
    changes = [runs[k][0] for k in range(1, len(runs))
               if abs(means[k] - means[k - 1]) >= threshold_us]
    return ChangePointReport(bin_size_s, changes, [e - a for a, e in runs],
                             [m + offset for m in means])


# -- synthesis --------------------------------------------------------------------


@dataclass
class CycleSpec:
    rate_mbps: float
    pd_us: int
    duration_ms: float = 5000.0
    outages_ms: Sequence[tuple[float, float]] = ()


@dataclass
class TraceSpec:
    cycles: list[CycleSpec]
    mtu_bytes: int = DEFAULT_MTU


def op_spacing_us(rate_mbps: float, mtu_bytes: int = DEFAULT_MTU) -> float:
    return mtu_bytes * 8 / rate_mbps


def synth_trace(spec: TraceSpec) -> CellNemTrace:
    """Evenly spaced delivery opportunities per cycle, skipping outage windows."""
    cycles = []
    for k, c in enumerate(spec.cycles):
        if c.rate_mbps < 0 or c.pd_us < 0 or c.duration_ms <= 0:
            raise BadSpec(f"cycle {k}: negative rate/pd or empty duration")
        dur_us = int(round(c.duration_ms * 1000))
        if c.rate_mbps == 0:
            ops = np.zeros(0, dtype=np.int64)
        else:
            step = op_spacing_us(c.rate_mbps, spec.mtu_bytes)
            # the epsilon keeps exact multiples (10 ms at 1.12 Mbps) from flooring down
            ops = np.floor(np.arange(0, dur_us / step) * step + 1e-6).astype(np.int64)
            ops = ops[ops < dur_us]
            for a, b in c.outages_ms:
                ops = ops[(ops < a * 1000) | (ops >= b * 1000)]
        cycles.append(Cycle(k, int(c.pd_us), ops, dur_us))
    return CellNemTrace(cycles)


def constant_spec(rate_mbps: float, pd_us: int, n_cycles: int, cycle_ms: float = 5000.0,
                  mtu_bytes: int = DEFAULT_MTU) -> TraceSpec:
    return TraceSpec([CycleSpec(rate_mbps, pd_us, cycle_ms) for _ in range(n_cycles)], mtu_bytes)


def anticorrelated_specs(rate_mbps: float, pd_us: int, n_cycles: int, cycle_ms: float = 5000.0,
                         mtu_bytes: int = DEFAULT_MTU) -> tuple[TraceSpec, TraceSpec]:
    """Two links that take turns being dark: A on odd cycles, B on even ones."""
    a = [CycleSpec(0.0 if k % 2 else rate_mbps, pd_us, cycle_ms) for k in range(n_cycles)]
    b = [CycleSpec(rate_mbps if k % 2 else 0.0, pd_us, cycle_ms) for k in range(n_cycles)]
    return TraceSpec(a, mtu_bytes), TraceSpec(b, mtu_bytes)


def synth_owd_series(duration_s: float, base_us: int, steps: Sequence[tuple[float, int]] = (),
                     interval_ms: float = 100.0, jitter_us: int = 0, seed: int = 0) -> OwdSeries:
    """Probe-style OWD log: a floor with optional (time_s, delta_us) steps plus queueing jitter."""
    rng = np.random.default_rng(seed)
    ts = np.arange(0, int(duration_s * 1e6), int(interval_ms * 1000), dtype=np.int64)
    owd = np.full(len(ts), base_us, dtype=np.int64)
    for at_s, delta in steps:
        owd[ts >= int(at_s * 1e6)] += delta
    if jitter_us:
        owd += rng.integers(0, jitter_us + 1, len(ts))
    return OwdSeries(ts, owd)
