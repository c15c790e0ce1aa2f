"""
Recording a link, then reading its delay log
============================================

First we point the recorder at an emulated link whose rate and delay we
know, and check that it gets both back. Then we feed a probe delay log
with two steps to the change-point analysis.
"""

from mpvideo.emulib import EmulatedLink, RecordConfig, record_session
from mpvideo.traces import (CycleSpec, TraceSpec, detect_changes, min_owd_bins,
                            synth_owd_series, synth_trace)

# the link under test: one cycle per 2 s record slot (1 s saturating, 1 s probing)
link = EmulatedLink(synth_trace(TraceSpec([
    CycleSpec(6, 10_000, 2000),
    CycleSpec(3, 25_000, 2000),
    CycleSpec(0, 25_000, 2000),  # dead: the recorder keeps the previous delay
    CycleSpec(6, 10_000, 2000),
])))

recorded = record_session(link, RecordConfig(cycles=4, cycle_s=1.0))
for c in recorded.cycles:
    rate = len(c.ops_us) * 1400 * 8 / c.duration_us
    note = "  (queue never drained)" if c.drain_timeout else ""
    print(f"cycle {c.index}: delay {c.pd_us / 1000:6.2f} ms  rate {rate:4.2f} Mbps{note}")

# a minute of probes: +5 ms at 20 s, back down at 45 s, a little noise
series = synth_owd_series(60, 20_000, steps=[(20, 5_000), (45, -5_000)], jitter_us=400, seed=1)
report = detect_changes(min_owd_bins(series))
print("changes at", report.change_bins, "s; steady runs", report.persistent_bin_lengths, "s")
