"""Command-line entry point: ``mpvideo <command> ...``.

Exit codes: 0 success, 2 configuration or usage error, 3 trace error.

Manifest (TOML)::

    name = "anticorrelated"
    output_dir = "out/anticorrelated"     # relative to the manifest

    [session]                             # any SessionConfig field
    duration_s = 60
    seed = 1
    max_frame_bytes = 10000

    [[links]]
    trace = "traces/a.cellnem"            # relative to the manifest
    pd_us = 20000                         # used by plain traces only
    # reverse = "traces/a_rev.cellnem"
    # bottleneck = "shared"               # links with one label share capacity

    [[runs]]                              # for `compare`; optional
    name = "both"
    mode = "multipath"

Without ``[[runs]]``, ``compare`` runs multipath plus one single-path run per
link.

Defaults:

    =================  =========
    delta_us           100000
    mtu_bytes          1400
    fps                30
    alpha              0.1
    omega_us           5000
    =================  =========
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np
import tomli

from . import __version__
from .emulib.fidelity import MODES, SENDERS, FidelityScenario, run_fidelity
from .emulib.link import EmulatedLink
from .emulib.record import RecordConfig, record_session
from .emulib.trace import TraceFormatError, read_any_trace, write_cellnem_trace, write_link_trace
from .session import (MULTIPATH, SINGLE, ConfigError, LinkSpec, SessionConfig, TraceLoadError,
                      comparison_csv, run)
from .traces import (BadSpec, CycleSpec, EmptySeries, TraceSpec, detect_changes, min_owd_bins,
                     read_owd_series, synth_owd_series, synth_trace, write_owd_series)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRACE = 3

_SESSION_FIELDS = {f.name for f in dataclasses.fields(SessionConfig)} - {"links"}


# -- manifests ------------------------------------------------------------------


@dataclasses.dataclass
class RunManifest:
    name: str
    base: SessionConfig
    runs: list[SessionConfig]
    output_dir: Path
    trace_paths: list[Path]


def _session_config(doc: dict, links: list[LinkSpec]) -> SessionConfig:
    unknown = set(doc) - _SESSION_FIELDS
    if unknown:
        raise ConfigError(f"unknown session keys: {', '.join(sorted(unknown))}")
    try:
        cfg = SessionConfig(links=links, **doc)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    cfg.validate()
    return cfg


def load_manifest(path, output_dir: Optional[str] = None) -> RunManifest:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            doc = tomli.load(f)
    except FileNotFoundError:
        raise ConfigError(f"manifest not found: {path}") from None
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    root = path.parent
    unknown = set(doc) - {"name", "output_dir", "session", "links", "runs"}
    if unknown:
        raise ConfigError(f"unknown manifest keys: {', '.join(sorted(unknown))}")
    links, paths = [], []
    for i, ld in enumerate(doc.get("links", [])):
        if "trace" not in ld:
            raise ConfigError(f"links[{i}] has no trace")
        extra = set(ld) - {"trace", "pd_us", "reverse", "name", "bottleneck"}
        if extra:
            raise ConfigError(f"links[{i}]: unknown keys {', '.join(sorted(extra))}")
        fwd = root / ld["trace"]
        rev = root / ld["reverse"] if "reverse" in ld else None
        for p in (fwd, rev):
            if p is not None:
                paths.append(p)
                if not p.is_file():
                    raise TraceLoadError(f"trace file not found: {p}")
        links.append(LinkSpec(str(fwd), int(ld.get("pd_us", 0)),
                              str(rev) if rev else None, ld.get("name", f"link{i}"),
                              str(ld.get("bottleneck", ""))))
    base = _session_config(dict(doc.get("session", {})), links)
    runs = []
    for rd in doc.get("runs", []):
        merged = {**doc.get("session", {}), **rd}
        runs.append(_session_config(merged, links))
    name = doc.get("name", path.stem)
    out = Path(output_dir) if output_dir else root / doc.get("output_dir", f"out/{name}")
    return RunManifest(name, base, runs, out, paths)


def default_runs(base: SessionConfig) -> list[SessionConfig]:
    runs = [dataclasses.replace(base, mode=MULTIPATH, name=MULTIPATH)]
    for i, link in enumerate(base.links):
        runs.append(dataclasses.replace(base, mode=SINGLE, single_path=i,
                                        name=f"single-{link.name or i}"))
    return runs


# -- output ---------------------------------------------------------------------


class AtomicDir:
    """Build outputs in a sibling temp directory, then swap it into place."""

    def __init__(self, target: Path):
        self.target = Path(target)

    def __enter__(self) -> Path:
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.target.name}.", dir=self.target.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.target.exists():
            old = self.target.with_name(f".{self.target.name}.old")
            shutil.rmtree(old, ignore_errors=True)
            os.replace(self.target, old)
            os.replace(self.tmp, self.target)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.replace(self.tmp, self.target)
        return False


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="") as f:
        f.write(text)


def _config_doc(cfg: SessionConfig) -> dict:
    d = {k: getattr(cfg, k) for k in sorted(_SESSION_FIELDS)}
    d["links"] = [{"trace": str(l.trace), "pd_us": l.pd_us,
                   "reverse": None if l.reverse is None else str(l.reverse), "name": l.name,
                   "bottleneck": l.bottleneck}
                  for l in cfg.links]
    return d


def _run_log(cfg: SessionConfig, metrics) -> dict:
    # no wall-clock fields: reruns must produce identical bytes
    return {
        "version": __version__,
        "config": _config_doc(cfg),
        "frames": len(metrics.frames),
        "complete_fraction": round(metrics.complete_fraction, 6),
        "late_fraction": round(metrics.late_fraction, 6),
        "mean_quality": round(metrics.mean_quality, 6),
        "cwnd_violations": metrics.cwnd_violations,
        "deadline_violations": metrics.deadline_violations,
        "recovery_entries": metrics.recovery_entries,
        "probes_sent": metrics.probes_sent,
    }


def _write_run(out: Path, cfg: SessionConfig, metrics, prefix: str = "") -> None:
    _write(out / f"{prefix}frames.csv", metrics.frames_csv())
    _write(out / f"{prefix}summary.csv", metrics.summary_csv())
    _write(out / f"{prefix}run.json", json.dumps(_run_log(cfg, metrics), indent=2, sort_keys=True) + "\n")


# -- commands -------------------------------------------------------------------


def cmd_run(args) -> int:
    m = load_manifest(args.manifest, args.out)
    cfg = m.base
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    metrics = run(cfg)
    with AtomicDir(m.output_dir) as tmp:
        _write_run(tmp, cfg, metrics)
    d = metrics.delay_summary()
    print(f"{m.name}: {len(metrics.frames)} frames, {100 * metrics.complete_fraction:.1f}% complete, "
          f"p95 delay {d.p95 / 1000:.1f} ms -> {m.output_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    m = load_manifest(args.manifest, args.out)
    runs = m.runs or default_runs(m.base)
    if args.seed is not None:
        runs = [dataclasses.replace(r, seed=args.seed) for r in runs]
    results = [run(r) for r in runs]
    table = comparison_csv(results)
    with AtomicDir(m.output_dir) as tmp:
        _write(tmp / "comparison.csv", table)
        for cfg, res in zip(runs, results):
            _write_run(tmp, cfg, res, prefix=f"{res.label}.")
    sys.stdout.write(table)
    return EXIT_OK


def _float_list(s: str) -> list[float]:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def cmd_synth_trace(args) -> int:
    rates, pds = args.rate_mbps, args.pd_us
    if not rates or not pds:
        raise ConfigError("rate and pd lists must be non-empty")
    cycles = [CycleSpec(rates[k % len(rates)], int(pds[k % len(pds)]), args.cycle_ms)
              for k in range(args.cycles)]
    for k in args.outage_cycle or []:
        if not 0 <= k < args.cycles:
            raise ConfigError(f"outage cycle {k} out of range")
        cycles[k].rate_mbps = 0.0
    try:
        trace = synth_trace(TraceSpec(cycles, args.mtu))
    except BadSpec as e:
        raise ConfigError(str(e)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "plain":
        write_link_trace(trace.to_link_trace(), out)
    else:
        write_cellnem_trace(trace, out)
    n = sum(len(c.ops_us) for c in trace.cycles)
    print(f"{out}: {len(trace.cycles)} cycles, {n} delivery opportunities")
    return EXIT_OK


def _step(s: str) -> tuple[float, int]:
    try:
        t, d = s.split(":")
        return float(t), int(d)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected TIME_S:DELTA_US, got {s!r}") from None


def cmd_synth_owd(args) -> int:
    if args.duration_s <= 0 or args.interval_ms <= 0:
        raise ConfigError("duration and interval must be positive")
    series = synth_owd_series(args.duration_s, args.base_us, args.step or [], args.interval_ms,
                              args.jitter_us, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_owd_series(series, out)
    print(f"{out}: {len(series)} samples")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        series = read_owd_series(args.owd)
        bins = min_owd_bins(series)
    except FileNotFoundError:
        raise TraceLoadError(f"OWD file not found: {args.owd}") from None
    except (ValueError, EmptySeries) as e:
        raise TraceLoadError(f"{args.owd}: {e}") from None
    try:
        report = detect_changes(bins, args.threshold_us)
    except ValueError as e:
        raise TraceLoadError(f"{args.owd}: {e}") from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)
    lengths = report.persistent_bin_lengths
    print(f"{len(bins)} bins, {len(report.change_bins)} changes at {report.change_bins}, "
          f"run lengths min/median/max {min(lengths)}/{int(np.median(lengths))}/{max(lengths)} s")
    return EXIT_OK


def cmd_record(args) -> int:
    try:
        fwd = read_any_trace(args.trace, args.pd_us)
        rev = read_any_trace(args.reverse, args.pd_us) if args.reverse else None
    except FileNotFoundError as e:
        raise TraceLoadError(f"trace file not found: {e.filename}") from None
    except TraceFormatError as e:
        raise TraceLoadError(str(e)) from None
    if args.cycles < 1 or args.cycle_s <= 0:
        raise ConfigError("cycles and cycle_s must be positive")
    link = EmulatedLink(fwd, rev)
    cfg = RecordConfig(cycles=args.cycles, cycle_s=args.cycle_s,
                       probe_interval_ms=args.probe_interval_ms, probe_bytes=args.probe_bytes,
                       drain_timeout_ms=args.drain_timeout_ms, mtu_bytes=args.mtu)
    trace = record_session(link, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cellnem_trace(trace, out)
    for c in trace.cycles:
        mbps = len(c.ops_us) * args.mtu * 8 / c.duration_us
        flag = " drain-timeout" if c.drain_timeout else ""
        print(f"cycle {c.index}: pd {c.pd_us} us, {len(c.ops_us)} ops, {mbps:.2f} Mbps{flag}")
    return EXIT_OK


def cmd_replay_fidelity(args) -> int:
    sc = FidelityScenario(rate_mbps=args.rate_mbps, pd_before_us=args.pd_before_us,
                          pd_after_us=args.pd_after_us)
    if sc.rate_mbps <= 0 or sc.pd_before_us < 0 or sc.pd_after_us < 0:
        raise ConfigError("rate must be positive and delays non-negative")
    senders = SENDERS if args.sender == "both" else (args.sender,)
    modes = MODES if args.mode == "both" else (args.mode,)
    with AtomicDir(Path(args.out)) as tmp:
        summary = ["sender,mode,post_packets,elevation_min_us,elevation_max_us,within_1ms"]
        for s in senders:
            for md in modes:
                r = run_fidelity(sc, s, md)
                lines = ["send_us,owd_us,elevation_us,post_step"]
                lines += [f"{a},{b},{c:.1f},{d}" for a, b, c, d in r.rows()]
                _write(tmp / f"owd_{s}_{md}.csv", "\n".join(lines) + "\n")
                e = r.post_elevations()
                ok = bool(np.all(np.abs(e - sc.step_us) <= 1000))
                summary.append(f"{s},{md},{len(e)},{e.min():.1f},{e.max():.1f},{int(ok)}")
        _write(tmp / "summary.csv", "\n".join(summary) + "\n")
    print("\n".join(summary))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpvideo", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one session from a manifest")
    r.add_argument("manifest", help="TOML manifest")
    r.add_argument("--out", help="output directory (overrides the manifest)")
    r.add_argument("--seed", type=int, help="override the manifest seed")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="multipath against each single path")
    c.add_argument("manifest", help="TOML manifest")
    c.add_argument("--out", help="output directory (overrides the manifest)")
    c.add_argument("--seed", type=int, help="override the manifest seed")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("synth", help="synthesize a link trace or an OWD log")
    ss = s.add_subparsers(dest="kind", required=True)
    st = ss.add_parser("trace", help="evenly spaced delivery opportunities per cycle")
    st.add_argument("--rate-mbps", type=_float_list, required=True,
                    help="rate per cycle, comma-separated, repeated cyclically")
    st.add_argument("--pd-us", type=_float_list, default=[0.0],
                    help="one-way propagation delay per cycle, comma-separated")
    st.add_argument("--cycles", type=int, default=20, help="number of cycles (default 20)")
    st.add_argument("--cycle-ms", type=float, default=5000.0, help="cycle length (default 5000)")
    st.add_argument("--outage-cycle", type=int, action="append", help="zero-rate cycle index")
    st.add_argument("--mtu", type=int, default=1400, help="bytes per opportunity (default 1400)")
    st.add_argument("--format", choices=("cellnem", "plain"), default="cellnem")
    st.add_argument("--out", required=True, help="trace file to write")
    st.set_defaults(func=cmd_synth_trace)
    so = ss.add_parser("owd", help="probe-style one-way delay log")
    so.add_argument("--duration-s", type=float, required=True)
    so.add_argument("--base-us", type=int, default=20_000)
    so.add_argument("--step", type=_step, action="append", help="TIME_S:DELTA_US delay step")
    so.add_argument("--interval-ms", type=float, default=100.0)
    so.add_argument("--jitter-us", type=int, default=0)
    so.add_argument("--seed", type=int, default=0)
    so.add_argument("--out", required=True)
    so.set_defaults(func=cmd_synth_owd)

    a = sub.add_parser("analyze", help="per-second min OWD and change points")
    a.add_argument("owd", help="OWD log, '<timestamp_us> <owd_us>' per line")
    a.add_argument("--threshold-us", type=float, default=2000.0,
                   help="smallest mean shift reported as a change (default 2000)")
    a.add_argument("--out", required=True, help="report CSV")
    a.set_defaults(func=cmd_analyze)

    rc = sub.add_parser("record", help="record a cycle trace through an emulated link")
    rc.add_argument("--trace", required=True, help="trace of the link under test")
    rc.add_argument("--reverse", help="reverse-direction trace (default: same as forward)")
    rc.add_argument("--pd-us", type=int, default=0, help="delay for plain traces")
    rc.add_argument("--cycles", type=int, default=4)
    rc.add_argument("--cycle-s", type=float, default=5.0)
    rc.add_argument("--probe-interval-ms", type=float, default=100.0)
    rc.add_argument("--probe-bytes", type=int, default=50)
    rc.add_argument("--drain-timeout-ms", type=float, default=1000.0)
    rc.add_argument("--mtu", type=int, default=1400)
    rc.add_argument("--out", required=True, help="cycle trace to write")
    rc.set_defaults(func=cmd_record)

    f = sub.add_parser("replay-fidelity", help="OWD under a mid-trace delay step")
    f.add_argument("--sender", choices=(*SENDERS, "both"), default="both")
    f.add_argument("--mode", choices=(*MODES, "both"), default="both")
    f.add_argument("--rate-mbps", type=float, default=6.0)
    f.add_argument("--pd-before-us", type=int, default=10_000)
    f.add_argument("--pd-after-us", type=int, default=30_000)
    f.add_argument("--out", required=True, help="output directory")
    f.set_defaults(func=cmd_replay_fidelity)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceLoadError, TraceFormatError) as e:
        print(f"trace error: {e}", file=sys.stderr)
        return EXIT_TRACE


if __name__ == "__main__":
    sys.exit(main())
