import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpvideo.emulib import (FORWARD, REVERSE, CellNemTrace, Cycle, EmulatedLink, LinkTrace,
                            RealtimePump, RecordConfig, TraceFormatError, fold_propagation,
                            read_any_trace, read_cellnem_trace, read_link_trace, record_session,
                            send, step, write_cellnem_trace, write_link_trace)
from mpvideo.traces import CycleSpec, TraceSpec, constant_spec, synth_trace

from oracles import walk_opportunities


def test_send_waits_for_next_opportunity():
    link = EmulatedLink(LinkTrace.from_ms([0, 5, 10, 15], 20), pd_us=10_000)
    assert send(link, FORWARD, "a", 3_000) == 15_000


def test_one_packet_per_opportunity():
    link = EmulatedLink(LinkTrace.from_ms([10, 15, 20], 30), pd_us=10_000)
    assert link.send(FORWARD, "a", 0) == 10_000
    assert link.send(FORWARD, "b", 0) == 15_000


def test_zero_delay_op_at_send_time():
    link = EmulatedLink(LinkTrace.from_ms([7, 9], 10))
    assert link.send(FORWARD, "a", 7_000) == 7_000


def test_step_returns_in_order_and_is_idempotent():
    link = EmulatedLink(LinkTrace.from_ms([1, 2, 3, 4], 10), pd_us=0)
    assert step(link, 100) == []
    for i in range(3):
        link.send(FORWARD, i, 0)
    link.send(REVERSE, "r", 0)
    got = link.step(2_000)
    assert [(d.time_us, d.direction, d.packet) for d in got] == [
        (1_000, FORWARD, 0), (1_000, REVERSE, "r"), (2_000, FORWARD, 1)]
    assert link.step(2_000) == []
    assert [d.packet for d in link.step(3_000)] == [2]
    with pytest.raises(ValueError):
        link.step(1_000)


def test_trace_loops_when_outlasted():
    link = EmulatedLink(LinkTrace.from_ms([2, 4], 10))
    assert link.send(FORWARD, "a", 11_000) == 12_000
    assert link.send(FORWARD, "b", 15_000) == 22_000


def test_delay_follows_cycle_of_send_time():
    tr = CellNemTrace([Cycle(0, 10_000, np.arange(0, 1_000_000, 1_000), 1_000_000),
                       Cycle(1, 30_000, np.arange(0, 1_000_000, 1_000), 1_000_000)])
    link = EmulatedLink(tr)
    assert link.send(FORWARD, "a", 500_000) == 510_000
    assert link.send(FORWARD, "b", 1_500_000) == 1_530_000


def test_empty_trace_never_delivers():
    link = EmulatedLink(LinkTrace(np.zeros(0, dtype=np.int64), 1000))
    assert link.send(FORWARD, "a", 0) is None
    assert link.fwd.stuck == 1


def test_byte_credit_lets_small_datagrams_share():
    link = EmulatedLink(LinkTrace.from_ms([1, 2, 3], 10), op_bytes=1400)
    times = [link.send(FORWARD, i, 0, 33) for i in range(3)]
    assert times == [1_000, 1_000, 1_000]
    assert link.send(FORWARD, "big", 0, 1400) == 2_000


def test_queue_cap_drops_tail():
    link = EmulatedLink(LinkTrace.from_ms([100], 200), queue_cap_bytes=2800)
    assert link.send(FORWARD, 0, 0) is not None
    assert link.send(FORWARD, 1, 0) is not None
    assert link.send(FORWARD, 2, 0) is None and link.fwd.dropped == 1


sends = st.lists(st.integers(0, 300_000), min_size=1, max_size=60).map(sorted)
op_lists = st.lists(st.integers(0, 99_000), min_size=1, max_size=40).map(sorted)


@settings(max_examples=200, deadline=None)
@given(op_lists, sends, st.integers(0, 50_000))
def test_matches_walk_oracle(ops, times, pd):
    period = 100_000
    link = EmulatedLink(LinkTrace(np.array(ops), period), pd_us=pd)
    got = [link.send(FORWARD, i, t) for i, t in enumerate(times)]
    assert got == walk_opportunities(ops, period, [t + pd for t in times])


@settings(max_examples=100, deadline=None)
@given(op_lists, sends, st.integers(0, 50_000))
def test_conservation_fifo_determinism(ops, times, pd):
    def once():
        link = EmulatedLink(LinkTrace(np.array(ops), 100_000), pd_us=pd)
        for i, t in enumerate(times):
            link.send(FORWARD, i, t)
        return [(d.time_us, d.packet) for d in link.step(10**9)]

    a = once()
    assert [p for _, p in a] == list(range(len(times)))
    assert a == once()


# -- trace files ----------------------------------------------------------------

def test_link_trace_roundtrip(tmp_path):
    p = tmp_path / "t.txt"
    write_link_trace(LinkTrace.from_ms([0, 1, 1, 5], 5), p)
    assert p.read_text() == "0\n1\n1\n5\n"
    assert read_link_trace(p).delivery_ops == [0, 1, 1, 5]


def test_cellnem_roundtrip(tmp_path):
    tr = synth_trace(TraceSpec([CycleSpec(6, 10_000, 50), CycleSpec(0, 30_000, 50)]))
    p = tmp_path / "t.cellnem"
    write_cellnem_trace(tr, p)
    back = read_cellnem_trace(p)
    assert [c.pd_us for c in back.cycles] == [10_000, 30_000]
    assert np.array_equal(back.cycles[0].ops_us, tr.cycles[0].ops_us)
    assert len(back.cycles[1].ops_us) == 0
    assert read_any_trace(p).duration_us == 100_000


def test_parsers_reject_bad_input(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("5\n3\n")
    with pytest.raises(TraceFormatError):
        read_link_trace(p)
    p.write_text("CYCLE 0 PD_US 1 DUR_MS 10\n4\n2\n")
    with pytest.raises(TraceFormatError):
        read_cellnem_trace(p)
    p.write_text("3\nCYCLE 0 PD_US 1 DUR_MS 10\n")
    with pytest.raises(TraceFormatError):
        read_cellnem_trace(p)
    p.write_text("x\n")
    with pytest.raises(TraceFormatError):
        read_any_trace(p)


def test_cycle_invariants():
    with pytest.raises(TraceFormatError):
        Cycle(0, -1, [0])
    with pytest.raises(TraceFormatError):
        Cycle(0, 0, [5, 1])
    with pytest.raises(TraceFormatError):
        Cycle(0, 0, [10], duration_us=5)


def test_fold_shifts_later_cycles():
    tr = CellNemTrace([Cycle(0, 10_000, [0, 500], 1000), Cycle(1, 30_000, [0, 500], 1000)])
    assert fold_propagation(tr).ops_us.tolist() == [0, 500, 21_000, 21_500]


# -- recording --------------------------------------------------------------------

def test_record_constant_link():
    link = EmulatedLink(synth_trace(constant_spec(6, 10_000, 8)))
    tr = record_session(link, RecordConfig(cycles=2))
    for c in tr.cycles:
        assert abs(c.pd_us - 10_000) <= 1_000
        assert len(c.ops_us) / 5 == pytest.approx(6e6 / (1400 * 8), rel=0.1)
        assert not c.drain_timeout


def test_record_sees_delay_step():
    spec = TraceSpec([CycleSpec(6, 10_000, 10_000), CycleSpec(6, 30_000, 10_000)])
    tr = record_session(EmulatedLink(synth_trace(spec)), RecordConfig(cycles=2))
    assert [round(c.pd_us, -3) for c in tr.cycles] == [10_000, 30_000]


def test_record_outage_cycle():
    spec = TraceSpec([CycleSpec(6, 10_000, 10_000), CycleSpec(0, 10_000, 10_000),
                      CycleSpec(6, 10_000, 10_000)])
    tr = record_session(EmulatedLink(synth_trace(spec)), RecordConfig(cycles=3))
    assert len(tr.cycles[1].ops_us) == 0 and tr.cycles[1].drain_timeout
    assert tr.cycles[1].pd_us == tr.cycles[0].pd_us
    assert not tr.cycles[0].drain_timeout


def test_recorded_trace_replays_like_the_original():
    link = EmulatedLink(synth_trace(constant_spec(6, 10_000, 8)))
    rec = record_session(link, RecordConfig(cycles=2))
    a = EmulatedLink(synth_trace(constant_spec(6, 10_000, 2)))
    b = EmulatedLink(rec)
    for t in range(100_000, 4_900_000, 100_000):
        assert abs(a.send(FORWARD, 0, t, 200) - b.send(FORWARD, 0, t, 200)) <= 3_000


# -- real time ------------------------------------------------------------------

class FakeClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t

    def sleep(self, s):
        self.t += s


def test_realtime_pump_delivers_on_schedule():
    clock = FakeClock()
    got = []
    link = EmulatedLink(LinkTrace.from_ms([5, 10], 20), pd_us=1_000)
    pump = RealtimePump(link, got.append, clock=clock, sleep=clock.sleep)
    pump.send(FORWARD, "a")
    pump.send(FORWARD, "b")
    pump.run(50_000)
    assert [(d.packet, d.time_us) for d in got] == [("a", 5_000), ("b", 10_000)]
