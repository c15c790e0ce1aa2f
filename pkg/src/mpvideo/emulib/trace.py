"""Delivery-opportunity traces and their text formats.

Plain traces hold one integer millisecond timestamp per line (the
mahimahi/cellsim convention). Cycle traces add a header line per cycle::

    CYCLE <idx> PD_US <pd> DUR_MS <duration>
    <relative ms timestamp>
    ...

Cycle timestamps may carry a fractional part (microsecond precision).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


class TraceFormatError(ValueError):
    pass


def _as_us(values_ms: Iterable[float]) -> np.ndarray:
    return np.rint(np.asarray(list(values_ms), dtype=np.float64) * 1000).astype(np.int64)


def _check_sorted(ops_us: np.ndarray, what: str) -> None:
    if len(ops_us) > 1 and np.any(np.diff(ops_us) < 0):
        raise TraceFormatError(f"{what}: timestamps are not monotonic")


@dataclass
class LinkTrace:
    """Delivery opportunities on one link direction, one MTU each."""

    ops_us: np.ndarray
    duration_us: int

    def __post_init__(self):
        self.ops_us = np.asarray(self.ops_us, dtype=np.int64)
        _check_sorted(self.ops_us, "LinkTrace")
        if len(self.ops_us) and self.ops_us[0] < 0:
            raise TraceFormatError("LinkTrace: negative timestamp")
        if len(self.ops_us) and self.duration_us < self.ops_us[-1]:
            raise TraceFormatError("LinkTrace: duration shorter than last opportunity")
        if self.duration_us <= 0:
            raise TraceFormatError("LinkTrace: duration must be positive")

    @classmethod
    def from_ms(cls, ops_ms: Sequence[float], duration_ms: Optional[float] = None) -> "LinkTrace":
        ops = _as_us(ops_ms)
        dur = int(round(duration_ms * 1000)) if duration_ms is not None else (
            int(ops[-1]) if len(ops) and ops[-1] > 0 else 1000)
        return cls(ops, dur)

    @property
    def delivery_ops(self) -> list[float]:
        return (self.ops_us / 1000).tolist()

    @property
    def duration_ms(self) -> float:
        return self.duration_us / 1000

    def __len__(self) -> int:
        return len(self.ops_us)

    def as_cycles(self, pd_us: int) -> "CellNemTrace":
        return CellNemTrace([Cycle(0, pd_us, self.ops_us.copy(), self.duration_us)])


@dataclass
class Cycle:
    index: int
    pd_us: int
    ops_us: np.ndarray
    duration_us: int = 5_000_000
    drain_timeout: bool = False

    def __post_init__(self):
        self.ops_us = np.asarray(self.ops_us, dtype=np.int64)
        if self.pd_us < 0:
            raise TraceFormatError(f"cycle {self.index}: negative propagation delay")
        _check_sorted(self.ops_us, f"cycle {self.index}")
        if len(self.ops_us) and (self.ops_us[0] < 0 or self.ops_us[-1] > self.duration_us):
            raise TraceFormatError(f"cycle {self.index}: opportunity outside the cycle")

    @property
    def delivery_ops(self) -> list[float]:
        return (self.ops_us / 1000).tolist()

    @property
    def duration_ms(self) -> float:
        return self.duration_us / 1000


@dataclass
class CellNemTrace:
    """Per-cycle propagation delay plus per-cycle delivery opportunities."""

    cycles: list[Cycle] = field(default_factory=list)

    @property
    def duration_us(self) -> int:
        return sum(c.duration_us for c in self.cycles)

    def flatten(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Absolute opportunity times, cycle start times and cycle pds."""
        starts = np.cumsum([0] + [c.duration_us for c in self.cycles[:-1]]).astype(np.int64)
        ops = [c.ops_us + s for c, s in zip(self.cycles, starts)]
        flat = np.concatenate(ops) if ops else np.zeros(0, dtype=np.int64)
        pds = np.array([c.pd_us for c in self.cycles], dtype=np.int64)
        return np.sort(flat, kind="stable"), starts, pds

    def to_link_trace(self) -> LinkTrace:
        flat, _, _ = self.flatten()
        return LinkTrace(flat, self.duration_us)


def fold_propagation(trace: CellNemTrace) -> LinkTrace:
    """What a constant-delay recorder would have captured on this path.

    Propagation changes show up only as shifted opportunities: cycle ``k``'s
    opportunities move by ``pd_k - pd_0``. Replay the result with the first
    cycle's delay held constant.
    """
    if not trace.cycles:
        raise TraceFormatError("empty trace")
    base = trace.cycles[0].pd_us
    flat, starts = [], 0
    for c in trace.cycles:
        flat.append(c.ops_us + starts + (c.pd_us - base))
        starts += c.duration_us
    ops = np.sort(np.concatenate(flat))
    ops = ops[ops >= 0]
    dur = max(trace.duration_us, int(ops[-1]) if len(ops) else 1)
    return LinkTrace(ops, dur)


# -- files -----------------------------------------------------------------------


def _fmt_ms(us: int) -> str:
    if us % 1000 == 0:
        return str(us // 1000)
    return f"{us / 1000:.3f}".rstrip("0")


def write_link_trace(trace: LinkTrace, path) -> None:
    """Integer milliseconds, one per line; sub-millisecond parts are floored."""
    with open(path, "w") as f:
        for us in trace.ops_us:
            f.write(f"{int(us) // 1000}\n")


def read_link_trace(path, duration_ms: Optional[float] = None) -> LinkTrace:
    vals = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                vals.append(float(line))
            except ValueError:
                raise TraceFormatError(f"{path}:{lineno}: not a timestamp: {line!r}") from None
    if not vals:
        raise TraceFormatError(f"{path}: no delivery opportunities")
    return LinkTrace.from_ms(vals, duration_ms)


def write_cellnem_trace(trace: CellNemTrace, path) -> None:
    with open(path, "w") as f:
        for c in trace.cycles:
            f.write(f"CYCLE {c.index} PD_US {c.pd_us} DUR_MS {_fmt_ms(c.duration_us)}\n")
            for us in c.ops_us:
                f.write(_fmt_ms(int(us)) + "\n")


def read_cellnem_trace(path) -> CellNemTrace:
    cycles: list[Cycle] = []
    head = None
    ops: list[float] = []

    def close():
        if head is not None:
            idx, pd, dur = head
            cycles.append(Cycle(idx, pd, _as_us(ops), int(round(dur * 1000))))

    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "CYCLE":
                if len(parts) != 6 or parts[2] != "PD_US" or parts[4] != "DUR_MS":
                    raise TraceFormatError(f"{path}:{lineno}: bad cycle header {line!r}")
                close()
                try:
                    head = (int(parts[1]), int(parts[3]), float(parts[5]))
                except ValueError:
                    raise TraceFormatError(f"{path}:{lineno}: bad cycle header {line!r}") from None
                ops = []
                continue
            if head is None:
                raise TraceFormatError(f"{path}:{lineno}: timestamp before first CYCLE header")
            try:
                v = float(line)
            except ValueError:
                raise TraceFormatError(f"{path}:{lineno}: not a timestamp: {line!r}") from None
            if ops and v < ops[-1]:
                raise TraceFormatError(f"{path}:{lineno}: timestamps are not monotonic")
            ops.append(v)
    close()
    if not cycles:
        raise TraceFormatError(f"{path}: no cycles")
    return CellNemTrace(cycles)


def read_any_trace(path, pd_us: int = 0) -> CellNemTrace:
    """Load either format; plain traces get a constant propagation delay."""
    with open(path) as f:
        for line in f:
            if line.strip() and not line.startswith("#"):
                is_cycles = line.split()[0] == "CYCLE"
                break
        else:
            raise TraceFormatError(f"{path}: empty trace file")
    if is_cycles:
        return read_cellnem_trace(path)
    return read_link_trace(path).as_cycles(pd_us)


def trace_exists(path) -> bool:
    return os.path.isfile(path)
