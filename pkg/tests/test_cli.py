import csv
import json

import numpy as np
import pytest

from qpburst import cli
from qpburst import qp_spectral as qs
from qpburst.device_model import default_profile
from qpburst.impact_synthesizer import GridSeries


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_synthesize_is_deterministic(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert run("synthesize", "--experiment", "scan_RET1", "--duration", 0.01, "--seed", 3, "--out", a) == 0
    assert run("synthesize", "--experiment", "scan_RET1", "--duration", 0.01, "--seed", 3, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    man = json.loads((tmp_path / "a.bin.manifest.json").read_text())
    assert man["subcommand"] == "synthesize" and man["seeds"] == [3]
    assert GridSeries.load(a).n_cycles == 2000


def test_synthesize_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert run("synthesize", "--experiment", "tomography", "--duration", 0.001, "--out", out, "--csv") == 0
    text = out.read_bytes()
    assert b"\r\n" not in text
    rows = list(csv.reader(text.decode().splitlines()))
    assert rows[0][:2] == ["time_s", "kind"]


def test_detect_on_empty_input(tmp_path):
    empty = tmp_path / "empty.bin"
    empty.write_bytes(b"")
    out = tmp_path / "r.json"
    assert run("detect", "--in", empty, "--out", out) == 0
    assert json.loads(out.read_text())["reports"] == []


def test_detect_finds_nothing_in_short_quiet_record(tmp_path):
    rec = tmp_path / "q.bin"
    run("synthesize", "--experiment", "scan_RET1", "--duration", 0.2, "--seed", 1, "--out", rec)
    out, mf = tmp_path / "r.json", tmp_path / "mf.csv"
    assert run("detect", "--in", rec, "--out", out, "--mf-csv", mf) == 0
    d = json.loads(out.read_text())
    assert d["meta"]["threshold"] == 4.0
    assert sum(1 for _ in mf.open()) == 1 + 40000


def test_exit_codes(tmp_path, monkeypatch, capsys):
    with pytest.raises(SystemExit) as e:
        run("synthesize", "--experiment", "nope", "--duration", 1, "--out", tmp_path / "x")
    assert e.value.code == cli.EXIT_USAGE
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a container")
    assert run("detect", "--in", bad, "--out", tmp_path / "r.json") == cli.EXIT_INPUT
    assert run("detect", "--in", tmp_path / "missing.bin", "--out", tmp_path / "r.json") == cli.EXIT_INPUT
    badprof = tmp_path / "p.toml"
    badprof.write_text("[material]\nunknown_key = 1\n")
    assert run("shift-table", "--profile", badprof, "--out", tmp_path / "t.csv") == cli.EXIT_INPUT

    def boom(*a, **k):
        raise qs.ConvergenceError("no convergence")
    monkeypatch.setattr(qs, "burst_error_curves", boom)
    assert run("qp-curves", "--out", tmp_path / "c.csv") == cli.EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


def test_qp_curves_csv(tmp_path):
    out, sc = tmp_path / "c.csv", tmp_path / "phi.csv"
    assert run("qp-curves", "--x-qp", 1e-4, "--tau-phN", 14e-9, "--n-scale", 1e5, "--t-min", 1e-9,
               "--t-max", 1e-3, "--points", 50, "--out", out, "--scaling-out", sc) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["time_s", "sigma_P1", "sigma_T1"] and len(rows) == 51
    vals = np.array(rows[1:], dtype=float)
    assert np.all(vals[:, 1:] >= 0)
    man = json.loads((tmp_path / "c.csv.manifest.json").read_text())
    assert man["parameters"]["crossing_ratio"] > 1
    assert sum(1 for _ in sc.open()) > 10


def test_shift_table(tmp_path):
    out = tmp_path / "t.csv"
    assert run("shift-table", "--out", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == default_profile().n_qubits
    assert all(float(r["shift_hz"]) < 0 for r in rows)
    assert {r["role"] for r in rows} >= {"monitor"}


def test_repcode_sweep_independent_of_jobs(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["repcode", "sweep", "--amps", "0,-1", "--traj", 200, "--seed", 2]
    assert run(*args, "--jobs", 1, "--out", a) == 0
    assert run(*args, "--jobs", 2, "--out", b) == 0
    assert a.read_text() == b.read_text()
    rows = list(csv.DictReader(a.open()))
    assert float(rows[1]["detection_probability"]) > float(rows[0]["detection_probability"])


def test_reproduce_unknown_figure(tmp_path):
    with pytest.raises(SystemExit):
        run("reproduce", "fig99", "--outdir", tmp_path)


def test_repcode_sweep_flags(tmp_path):
    out = tmp_path / "z.csv"
    assert run("repcode", "sweep", "--basis", "z", "--variant", "plain", "--amps", "-2", "--cycles", 4,
               "--traj", 100, "--jobs", 1, "--out", out) == 0
    man = json.loads((tmp_path / "z.csv.manifest.json").read_text())
    assert man["parameters"]["basis"] == "Z" and man["parameters"]["cycles"] == 4


def test_repcode_interleaved_feeds_detect(tmp_path):
    out = tmp_path / "il.csv"
    assert run("repcode", "interleaved", "--duration-us", 400, "--traj", 8, "--out", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == round(400e-6 / default_profile().timing.qec_cycle)
    for chan, kinds in (("qec", ["M"]), ("monitor", ["R", "T1"])):
        path = tmp_path / f"il_{chan}.bin"
        assert GridSeries.load(path).kinds == kinds
        rep = tmp_path / f"{chan}.json"
        assert run("detect", "--in", path, "--mode", "interleaved", "--out", rep) == 0
        assert "reports" in json.loads(rep.read_text())
