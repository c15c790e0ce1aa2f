import csv
import json

import pytest

from mpvideo.cli import build_parser, main


def synth(tmp_path, name, *extra):
    out = tmp_path / name
    assert main(["synth", "trace", "--cycles", "2", "--out", str(out), *extra]) == 0
    return out


@pytest.fixture
def manifest(tmp_path):
    synth(tmp_path, "a.cellnem", "--rate-mbps", "6", "--pd-us", "20000")
    synth(tmp_path, "b.cellnem", "--rate-mbps", "6,0", "--pd-us", "25000")
    m = tmp_path / "m.toml"
    m.write_text(
        'name = "pair"\n'
        "[session]\nduration_s = 2\nseed = 3\nmax_frame_bytes = 10000\n"
        '[[links]]\ntrace = "a.cellnem"\nname = "a"\n'
        '[[links]]\ntrace = "b.cellnem"\nname = "b"\n')
    return m


def test_synth_trace_op_count(tmp_path, capsys):
    out = synth(tmp_path, "t.cellnem", "--rate-mbps", "5.6", "--cycle-ms", "1000")
    assert "2 cycles, 1000 delivery opportunities" in capsys.readouterr().out
    assert out.read_text().startswith("CYCLE 0 PD_US 0 DUR_MS 1000\n")


def test_synth_plain_format(tmp_path):
    out = synth(tmp_path, "t.trace", "--rate-mbps", "1.12", "--cycle-ms", "100", "--format", "plain")
    ms = [int(x) for x in out.read_text().split()]
    assert ms == [10 * k for k in range(20)]


def test_run_writes_outputs(manifest, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(manifest), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "frames.csv")))
    assert len(rows) == 60
    assert (out / "summary.csv").read_text().startswith("metric,avg,p5,p25,p75,p95\n")
    log = json.loads((out / "run.json").read_text())
    assert log["frames"] == 60 and log["cwnd_violations"] == 0


def test_run_is_byte_identical(manifest, tmp_path):
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for o in outs:
        assert main(["run", str(manifest), "--out", str(o)]) == 0
    for f in ("frames.csv", "summary.csv", "run.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_compare_default_runs(manifest, tmp_path, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", str(manifest), "--out", str(out)]) == 0
    table = list(csv.DictReader(open(out / "comparison.csv")))
    assert [r["run"] for r in table] == ["multipath", "single-a", "single-b"]
    assert (out / "single-b.frames.csv").is_file()
    assert "quality_mean" in capsys.readouterr().out


def test_missing_trace_exits_3_without_output(tmp_path):
    m = tmp_path / "m.toml"
    m.write_text('[[links]]\ntrace = "nope.cellnem"\n')
    out = tmp_path / "out"
    assert main(["run", str(m), "--out", str(out)]) == 3
    assert not out.exists()


def test_malformed_trace_exits_3(tmp_path):
    (tmp_path / "bad.cellnem").write_text("cycle 0 1 2\n")
    m = tmp_path / "m.toml"
    m.write_text('[[links]]\ntrace = "bad.cellnem"\n')
    assert main(["run", str(m), "--out", str(tmp_path / "o")]) == 3
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("body", [
    'bogus = 1\n[[links]]\ntrace = "a.cellnem"\n',
    '[session]\nspeed = 2\n[[links]]\ntrace = "a.cellnem"\n',
    '[[links]]\ntrace = "a.cellnem"\ncolour = "red"\n',
    '[session]\nduration_s = -1\n[[links]]\ntrace = "a.cellnem"\n',
    "[[links]]\npd_us = 3\n",
    "not toml at all [",
])
def test_bad_manifest_exits_2(tmp_path, body):
    synth(tmp_path, "a.cellnem", "--rate-mbps", "6")
    m = tmp_path / "m.toml"
    m.write_text(body)
    assert main(["run", str(m), "--out", str(tmp_path / "o")]) == 2


def test_unknown_flag_exits_2(manifest):
    with pytest.raises(SystemExit) as e:
        main(["run", str(manifest), "--frobnicate"])
    assert e.value.code == 2


def test_shared_bottleneck_key_accepted(tmp_path):
    synth(tmp_path, "a.cellnem", "--rate-mbps", "6", "--pd-us", "20000")
    m = tmp_path / "m.toml"
    m.write_text('[session]\nduration_s = 1\n'
                 '[[links]]\ntrace = "a.cellnem"\nbottleneck = "x"\n'
                 '[[links]]\ntrace = "a.cellnem"\nbottleneck = "x"\n')
    assert main(["run", str(m), "--out", str(tmp_path / "o")]) == 0


def test_analyze_constant_series_has_no_changes(tmp_path, capsys):
    owd = tmp_path / "owd.txt"
    assert main(["synth", "owd", "--duration-s", "60", "--jitter-us", "500", "--out", str(owd)]) == 0
    rep = tmp_path / "rep.csv"
    assert main(["analyze", str(owd), "--out", str(rep)]) == 0
    assert "0 changes" in capsys.readouterr().out


def test_analyze_finds_step(tmp_path, capsys):
    owd = tmp_path / "owd.txt"
    main(["synth", "owd", "--duration-s", "60", "--step", "30:5000", "--out", str(owd)])
    capsys.readouterr()
    assert main(["analyze", str(owd), "--out", str(tmp_path / "rep.csv")]) == 0
    assert "1 changes at [30]" in capsys.readouterr().out


def test_analyze_missing_file_exits_3(tmp_path):
    assert main(["analyze", str(tmp_path / "x"), "--out", str(tmp_path / "r.csv")]) == 3


def test_record_recovers_link(tmp_path, capsys):
    link = synth(tmp_path, "l.cellnem", "--rate-mbps", "6", "--pd-us", "10000", "--cycle-ms", "2000")
    out = tmp_path / "rec.cellnem"
    assert main(["record", "--trace", str(link), "--cycles", "2", "--cycle-s", "1",
                 "--out", str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()[-2:]
    assert all("pd 10" in l for l in lines)
    assert out.is_file()


def test_replay_fidelity_outputs(tmp_path):
    out = tmp_path / "fid"
    assert main(["replay-fidelity", "--out", str(out)]) == 0
    rows = {(r["sender"], r["mode"]): r for r in csv.DictReader(open(out / "summary.csv"))}
    assert rows[("bulk", "cellnem")]["within_1ms"] == "1"
    assert rows[("onoff", "cellnem")]["within_1ms"] == "1"
    assert rows[("onoff", "cellsim")]["within_1ms"] == "0"
    assert (out / "owd_onoff_cellsim.csv").is_file()


@pytest.mark.parametrize("cmd", [[], ["run"], ["compare"], ["synth"], ["synth", "trace"],
                                 ["synth", "owd"], ["analyze"], ["record"], ["replay-fidelity"]])
def test_help_for_every_command(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        build_parser().parse_args([*cmd, "--help"])
    assert e.value.code == 0
    assert "usage:" in capsys.readouterr().out
