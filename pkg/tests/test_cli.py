import csv
import json
import shutil

import pytest

from gapcast.cli import run
from golden_cases import CASES, GOLDEN, INPUTS, output_files, run_case


@pytest.fixture
def work(tmp_path):
    shutil.copytree(INPUTS, tmp_path / "inputs")
    return tmp_path


def _run(work, monkeypatch, *argv):
    monkeypatch.chdir(work)
    return run(list(argv))


@pytest.mark.parametrize("name", sorted(CASES))
def test_golden(name, work):
    got = output_files(run_case(name, work))
    want = output_files(GOLDEN / name)
    assert sorted(got) == sorted(want)
    for fname in want:
        assert got[fname] == want[fname], f"{name}/{fname} differs from golden"


@pytest.mark.parametrize("name", ["estimate_gsc", "estimate_mc", "placebo_space"])
def test_thread_count_does_not_change_bytes(name, tmp_path, monkeypatch):
    outs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("GAPCAST_THREADS", threads)
        outs.append(output_files(run_case(name, tmp_path / threads)))
    assert outs[0] == outs[1]


def test_repeat_runs_identical(tmp_path):
    a = output_files(run_case("estimate_gsc", tmp_path / "a"))
    b = output_files(run_case("estimate_gsc", tmp_path / "b"))
    assert a == b


def test_simulate_matches_stored_panel(tmp_path):
    out = run_case("simulate", tmp_path)
    assert (out / "panel.csv").read_bytes() == (INPUTS / "sim_panel.csv").read_bytes()


def test_no_arguments(capsys):
    assert run([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag(capsys):
    assert run(["estimate", "--panel", "x.csv", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_twfe_without_compute(work, monkeypatch):
    assert _run(work, monkeypatch, "estimate", "--method", "twfe",
                "--panel", "inputs/worked.csv", "--out", "o") == 1


def test_missing_panel_is_data_error(work, monkeypatch):
    assert _run(work, monkeypatch, "estimate", "--panel", "inputs/none.csv", "--out", "o") == 2


def test_report_requires_artifacts(work, monkeypatch):
    (work / "empty").mkdir()
    assert _run(work, monkeypatch, "report", "--run-dir", "empty", "--out", "o") == 2


def test_simulate_then_estimate_then_report(work, monkeypatch):
    spec = {"seed": 3, "n_units": 15, "n_treated": 3, "n_periods": 12, "onset_period": 8,
            "r_true": 1}
    (work / "spec.json").write_text(json.dumps(spec))
    assert _run(work, monkeypatch, "simulate", "--spec", "spec.json", "--out", "sim") == 0
    assert _run(work, monkeypatch, "estimate", "--panel", "sim/panel.csv", "--r-max", "2",
                "--out", "est") == 0
    assert _run(work, monkeypatch, "report", "--run-dir", "est", "--out", "rep") == 0
    for name in ("gap.csv", "observed_vs_counterfactual.csv"):
        assert (work / "rep" / name).read_bytes() == (work / "est" / name).read_bytes()
    att = json.loads((work / "est" / "att.json").read_text())
    assert abs(att["att"] - 5.0) < 1.5


def test_worked_example_report(work, monkeypatch):
    assert _run(work, monkeypatch, "estimate", "--panel", "inputs/worked.csv", "--r", "0",
                "--min-pre", "2", "--out", "est") == 0
    with open(work / "est" / "observed_vs_counterfactual.csv") as fh:
        rows = {int(r["period"]): float(r["mean_counterfactual"]) for r in csv.DictReader(fh)}
    assert [rows[3], rows[4]] == [4.0, 5.0]


def test_zero_gap_report(work, monkeypatch):
    text = (work / "inputs" / "worked.csv").read_text()
    text = text.replace("u3,3,10,3", "u3,3,4,3").replace("u3,4,11,3", "u3,4,5,3")
    (work / "flat.csv").write_text(text)
    assert _run(work, monkeypatch, "estimate", "--panel", "flat.csv", "--r", "0",
                "--min-pre", "2", "--out", "est") == 0
    with open(work / "est" / "gap.csv") as fh:
        assert all(abs(float(r["att"])) < 1e-12 for r in csv.DictReader(fh))


def test_manifest_digests(work, monkeypatch):
    import hashlib
    assert _run(work, monkeypatch, "counts", "--records", "inputs/records.jsonl",
                "--groups", "inputs/groups.json", "--out", "c") == 0
    man = json.loads((work / "c" / "manifest.json").read_text())
    for path, digest in man["inputs"].items():
        assert hashlib.sha256((work / path).read_bytes()).hexdigest() == digest
