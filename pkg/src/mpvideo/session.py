"""End-to-end conferencing session over emulated links.

One virtual-clock event loop drives the encoder shim, the sender, every
link in both directions and the receiver. Datagrams cross the links as
encoded bytes. ACKs and decoder feedback are copied onto every reverse
path.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .codec import MAX_FRAME_BYTES, MIN_FRAME_BYTES, DecoderShim, EncoderShim, quality_proxy
from .emulib.link import FORWARD, REVERSE, EmulatedLink
from .emulib.trace import CellNemTrace, LinkTrace, TraceFormatError, read_any_trace
from .receiver import DEFAULT_OMEGA_US, Receiver, ReleasedFrame, emit_decoder_feedback
from .sender import Sender, SenderConfig
from .subflow import DEFAULT_ALPHA, DEFAULT_DELTA_US
from .wire import (DATA_HEADER_SIZE, DEFAULT_MTU, TYPE_ACK, TYPE_DATA, TYPE_FEEDBACK, WireConfig, decode_ack,
                   decode_data, decode_feedback, encode_ack, encode_data, encode_feedback)

PERCENTILES = (5, 25, 75, 95)
MULTIPATH = "multipath"
SINGLE = "single"


class ConfigError(ValueError):
    pass


class TraceLoadError(RuntimeError):
    pass


TraceSource = Union[str, CellNemTrace, LinkTrace]


@dataclass
class LinkSpec:
    """One path: forward trace, optional distinct reverse trace, and the
    constant delay applied to plain (cycle-less) traces.

    Paths given the same ``bottleneck`` label share a single emulated link,
    so their packets compete for the same delivery opportunities.
    """

    trace: TraceSource
    pd_us: int = 0
    reverse: Optional[TraceSource] = None
    name: str = ""
    bottleneck: str = ""


@dataclass
class SessionConfig:
    links: list[LinkSpec]
    duration_s: float = 10.0
    delta_us: int = DEFAULT_DELTA_US
    fps: float = 30.0
    mtu_bytes: int = DEFAULT_MTU
    alpha: float = DEFAULT_ALPHA
    omega_us: int = DEFAULT_OMEGA_US
    mode: str = MULTIPATH
    single_path: int = 0
    seed: int = 0
    clock: str = "virtual"
    min_frame_bytes: int = MIN_FRAME_BYTES
    max_frame_bytes: int = MAX_FRAME_BYTES
    probing: bool = True
    # bytes per delivery opportunity on session links, so ACKs share them
    link_op_bytes: Optional[int] = DEFAULT_MTU
    name: str = ""

    def validate(self) -> None:
        if not self.links:
            raise ConfigError("at least one link is required")
        if not self.duration_s > 0:
            raise ConfigError("duration_s must be positive")
        if not self.fps > 0:
            raise ConfigError("fps must be positive")
        if self.delta_us <= 0 or self.omega_us < 0:
            raise ConfigError("delta_us must be positive and omega_us non-negative")
        if self.mtu_bytes <= DATA_HEADER_SIZE:
            raise ConfigError("mtu_bytes too small for the data header")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.mode not in (MULTIPATH, SINGLE):
            raise ConfigError(f"mode must be {MULTIPATH!r} or {SINGLE!r}")
        if self.mode == SINGLE and not 0 <= self.single_path < len(self.links):
            raise ConfigError(f"single_path {self.single_path} out of range")
        if self.clock not in ("virtual", "realtime"):
            raise ConfigError("clock must be 'virtual' or 'realtime'")
        if not 0 < self.min_frame_bytes <= self.max_frame_bytes:
            raise ConfigError("need 0 < min_frame_bytes <= max_frame_bytes")

    @property
    def active_paths(self) -> list[int]:
        return list(range(len(self.links))) if self.mode == MULTIPATH else [self.single_path]

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return MULTIPATH if self.mode == MULTIPATH else f"single-{self.single_path}"


@dataclass
class FrameRecord:
    frame_no: int
    capture_us: int
    release_us: Optional[int]
    delivered_bytes: int
    complete: bool
    frag_count: int
    received_frags: int
    subflow_bytes: dict[int, int] = field(default_factory=dict)
    quality: float = 0.0

    @property
    def dropped(self) -> bool:
        return self.release_us is None

    @property
    def delay_us(self) -> Optional[int]:
        return None if self.release_us is None else self.release_us - self.capture_us


@dataclass
class Summary:
    avg: float
    p5: float
    p25: float
    p75: float
    p95: float

    def as_row(self) -> list[str]:
        return [_fmt(v) for v in (self.avg, self.p5, self.p25, self.p75, self.p95)]


@dataclass
class SessionMetrics:
    label: str
    delta_us: int
    frames: list[FrameRecord]
    cwnd_violations: int = 0
    deadline_violations: int = 0
    recovery_entries: int = 0
    probes_sent: int = 0
    release_order: list[int] = field(default_factory=list)
    max_in_flight_excess: int = 0

    @property
    def delays_us(self) -> list[int]:
        return [f.delay_us for f in self.frames if f.delay_us is not None]

    @property
    def complete_fraction(self) -> float:
        return sum(f.complete for f in self.frames) / len(self.frames) if self.frames else 0.0

    @property
    def late_fraction(self) -> float:
        """Frames never shown, or shown later than the delay budget."""
        if not self.frames:
            return 0.0
        late = sum(f.dropped or f.delay_us > self.delta_us for f in self.frames)
        return late / len(self.frames)

    @property
    def mean_quality(self) -> float:
        return float(np.mean([f.quality for f in self.frames])) if self.frames else 0.0

    def delay_summary(self) -> Summary:
        return summarize(self.delays_us)

    def quality_summary(self) -> Summary:
        return summarize([f.quality for f in self.frames])

    def frames_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame_no", "capture_us", "release_us", "bytes", "complete", "delay_us",
                    "subflow_bytes"])
        for f in self.frames:
            split = ";".join(f"{k}:{v}" for k, v in sorted(f.subflow_bytes.items()))
            w.writerow([f.frame_no, f.capture_us, "DROP" if f.dropped else f.release_us,
                        f.delivered_bytes, int(f.complete),
                        "" if f.delay_us is None else f.delay_us, split])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "avg", "p5", "p25", "p75", "p95"])
        w.writerow(["delay_us", *self.delay_summary().as_row()])
        w.writerow(["quality", *self.quality_summary().as_row()])
        return buf.getvalue()

    def comparison_row(self) -> dict:
        d = self.delay_summary()
        return {
            "run": self.label,
            "delay_avg_us": _fmt(d.avg), "delay_p5_us": _fmt(d.p5), "delay_p25_us": _fmt(d.p25),
            "delay_p75_us": _fmt(d.p75), "delay_p95_us": _fmt(d.p95),
            "quality_mean": _fmt(self.mean_quality),
            "complete_pct": _fmt(100 * self.complete_fraction),
            "late_pct": _fmt(100 * self.late_fraction),
        }


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{v:.3f}"


def nearest_rank(values: Sequence[float], p: float) -> float:
    """Percentile by rank ``floor(p/100 * n) + 1`` (1-based), capped at ``n``.

    For 100 values this picks the 96th smallest as p95, so the answer is an
    observed sample and does not depend on interpolation.
    """
    if not len(values):
        return math.nan
    if not 0 <= p <= 100:
        raise ValueError("percentile must lie in [0, 100]")
    s = sorted(values)
    rank = min(len(s), math.floor(p / 100 * len(s)) + 1)
    return float(s[rank - 1])


def summarize(values: Sequence[float]) -> Summary:
    if not len(values):
        return Summary(math.nan, math.nan, math.nan, math.nan, math.nan)
    return Summary(float(np.mean(values)), *(nearest_rank(values, p) for p in PERCENTILES))


# -- engine ---------------------------------------------------------------------


def load_trace(src: TraceSource, pd_us: int) -> CellNemTrace:
    if isinstance(src, CellNemTrace):
        return src
    if isinstance(src, LinkTrace):
        return src.as_cycles(pd_us)
    try:
        return read_any_trace(src, pd_us)
    except (OSError, TraceFormatError) as e:
        raise TraceLoadError(f"{src}: {e}") from e


def build_links(config: SessionConfig) -> dict[int, EmulatedLink]:
    links: dict[int, EmulatedLink] = {}
    shared: dict[str, EmulatedLink] = {}
    for i in config.active_paths:
        spec = config.links[i]
        if spec.bottleneck and spec.bottleneck in shared:
            links[i] = shared[spec.bottleneck]
            continue
        fwd = load_trace(spec.trace, spec.pd_us)
        rev = load_trace(spec.reverse, spec.pd_us) if spec.reverse is not None else fwd
        if not fwd.cycles or not rev.cycles:
            raise TraceLoadError(f"link {i}: empty trace")
        links[i] = EmulatedLink(fwd, rev, op_bytes=config.link_op_bytes)
        if spec.bottleneck:
            shared[spec.bottleneck] = links[i]
    return links


class Session:
    """The event loop. ``run`` is the usual entry point."""

    def __init__(self, config: SessionConfig, sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.monotonic):
        config.validate()
        self.config = config
        self.wire = WireConfig(config.mtu_bytes)
        self.links = build_links(config)
        self._unique_links = list({id(l): l for l in self.links.values()}.values())
        self.encoder = EncoderShim(fps=config.fps, min_frame_bytes=config.min_frame_bytes,
                                   max_frame_bytes=config.max_frame_bytes,
                                   mtu_bytes=config.mtu_bytes, delta_us=config.delta_us,
                                   seed=config.seed)
        self.sender = Sender(list(self.links), SenderConfig(config.delta_us, config.mtu_bytes,
                                                            config.alpha, config.probing))
        self.receiver = Receiver(config.delta_us, config.omega_us, self.encoder.frame_interval_us)
        self.decoder = DecoderShim()
        self.n_frames = int(round(config.duration_s * config.fps))
        self.released: dict[int, ReleasedFrame] = {}
        self.release_order: list[int] = []
        self.max_excess = 0
        self._sleep = sleep
        self._clock = clock
        self._t0: Optional[float] = None

    # -- transmit helpers --

    def _send_data(self, pkts, now: int) -> None:
        for p in pkts:
            sf = self.sender.subflows[p.subflow_id]
            self.max_excess = max(self.max_excess, sf.in_flight - sf.cwnd(now))
            buf = encode_data(p, self.wire)
            self.links[p.subflow_id].send(FORWARD, buf, now, len(buf))

    def _broadcast_reverse(self, buf: bytes, now: int) -> None:
        for link in self.links.values():
            link.send(REVERSE, buf, now, len(buf))

    def _on_released(self, frames: list[ReleasedFrame], now: int) -> None:
        for fr in frames:
            if fr.frame_no >= self.n_frames:
                continue
            self.released[fr.frame_no] = fr
            self.release_order.append(fr.frame_no)
            fb = emit_decoder_feedback(self.decoder, fr)
            self._broadcast_reverse(encode_feedback(fb), now)

    # -- event handlers --

    def _deliver(self, d, now: int) -> None:
        buf = d.packet
        kind = buf[0]
        if d.direction == FORWARD and kind == TYPE_DATA:
            pkt = decode_data(buf, self.wire)
            ack, frames = self.receiver.on_data(pkt, d.time_us)
            self._broadcast_reverse(encode_ack(ack), now)
            self._on_released(frames, now)
        elif d.direction == REVERSE and kind == TYPE_ACK:
            self._send_data(self.sender.on_ack(decode_ack(buf), now), now)
        elif d.direction == REVERSE and kind == TYPE_FEEDBACK:
            fb = decode_feedback(buf)
            self.encoder.target_size_bytes = self.sender.on_decoder_feedback(fb, now)
            self.encoder.on_feedback(fb)

    def _on_frame(self, now: int) -> None:
        # the budget is relayed continuously, so refresh it at encode time too
        self.encoder.target_size_bytes = self.sender.target_size(now)
        job = self.encoder.next_frame(now)
        self._send_data(self.sender.on_frame(job, now), now)

    def _wait_until(self, t_us: int) -> None:
        if self.config.clock != "realtime":
            return
        if self._t0 is None:
            self._t0 = self._clock()
        lag = t_us / 1e6 - (self._clock() - self._t0)
        if lag > 0:
            self._sleep(lag)

    def run(self) -> SessionMetrics:
        interval = self.encoder.frame_interval_us
        hard_stop = self.n_frames * interval + 10 * self.config.delta_us + 10_000_000
        next_frame = 0
        now = 0
        while self.receiver.next_expected < self.n_frames:
            cands = []
            if next_frame < self.n_frames:
                cands.append(self.encoder.capture_time(next_frame))
            for link in self._unique_links:
                t = link.next_time()
                if t is not None:
                    cands.append(t)
            g = self.receiver.grace_instant()
            if g is not None:
                cands.append(max(g, now))
            if not cands:
                break
            now = max(now, min(cands))
            if now > hard_stop:
                break
            self._wait_until(now)
            deliveries = []
            for link in self._unique_links:
                deliveries.extend(link.step(now))
            deliveries.sort(key=lambda d: (d.time_us, d.direction != FORWARD))
            for d in deliveries:
                self._deliver(d, now)
            while next_frame < self.n_frames and self.encoder.capture_time(next_frame) <= now:
                self._on_frame(now)
                next_frame += 1
            self._on_released(self.receiver.forward_ready(now), now)
        self._on_released(self.receiver.flush(now, self.n_frames), now)
        return self._metrics()

    def _metrics(self) -> SessionMetrics:
        frames = []
        cap = self.encoder.capture_time
        for k in range(self.n_frames):
            fr = self.released.get(k)
            if fr is None or fr.dropped:
                frames.append(FrameRecord(k, cap(k), None, 0, False,
                                          fr.frag_count if fr else 0, 0))
                continue
            frac = fr.received_frags / fr.frag_count
            frames.append(FrameRecord(
                k, cap(k), fr.release_ts_us, fr.delivered_bytes, fr.complete, fr.frag_count,
                fr.received_frags, dict(sorted(fr.subflow_bytes.items())),
                quality_proxy(fr.delivered_bytes, fr.complete, frac,
                              self.config.min_frame_bytes)))
        s = self.sender
        return SessionMetrics(self.config.label, self.config.delta_us, frames,
                              s.cwnd_violations, s.deadline_violations,
                              self.encoder.recovery_entries, s.probes_sent,
                              list(self.release_order), self.max_excess)


def run(config: SessionConfig) -> SessionMetrics:
    return Session(config).run()


def compare(configs: Sequence[SessionConfig]) -> list[SessionMetrics]:
    if not configs:
        raise ConfigError("nothing to compare")
    return [run(c) for c in configs]


COMPARISON_COLUMNS = ["run", "delay_avg_us", "delay_p5_us", "delay_p25_us", "delay_p75_us",
                      "delay_p95_us", "quality_mean", "complete_pct", "late_pct"]


def comparison_csv(results: Sequence[SessionMetrics]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, COMPARISON_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in results:
        w.writerow(r.comparison_row())
    return buf.getvalue()
