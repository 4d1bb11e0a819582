"""CLI runs checked byte-for-byte against tests/data/golden.

Paths are relative so the manifests are location independent; each run
executes inside a scratch directory holding a copy of tests/data/inputs.
"""

import os
import shutil
from pathlib import Path

from gapcast.cli import run

DATA = Path(__file__).parent / "data"
INPUTS = DATA / "inputs"
GOLDEN = DATA / "golden"

SIM = "inputs/sim_panel.csv"

CASES = {
    "simulate": ["simulate", "--spec", "inputs/dgp.json"],
    "validate": ["validate", "--panel", SIM, "--min-pre", "6"],
    "estimate_gsc": ["estimate", "--method", "gsc", "--panel", SIM, "--r-max", "3",
                     "--bootstrap", "100", "--seed", "7", "--dump-draws"],
    "estimate_gsc_worked": ["estimate", "--method", "gsc", "--panel", "inputs/worked.csv",
                            "--r", "0", "--min-pre", "2"],
    "estimate_mc": ["estimate", "--method", "mc", "--panel", SIM,
                    "--lambda-grid", "20,5,1", "--cv-folds", "3", "--seed", "7"],
    "estimate_twfe": ["estimate", "--method", "twfe", "--panel", SIM,
                      "--compute", "inputs/compute.csv", "--delta-compute", "100"],
    "placebo_time": ["placebo", "--kind", "time", "--shift", "3", "--panel", SIM,
                     "--r", "1", "--bootstrap", "100", "--seed", "3", "--min-pre", "4"],
    "placebo_space": ["placebo", "--kind", "space", "--pseudo-treated", "u00,u01",
                      "--onset", "2009", "--panel", SIM, "--r", "1", "--bootstrap", "100"],
    "counts": ["counts", "--records", "inputs/records.jsonl", "--groups", "inputs/groups.json"],
    "counts_weighted": ["counts", "--weighted", "--records", "inputs/records.jsonl",
                        "--groups", "inputs/groups.json"],
    "shares": ["shares", "--records", "inputs/records.jsonl", "--groups", "inputs/groups.json"],
    "filter_dl": ["filter-dl", "--records", "inputs/records.jsonl"],
    "tfidf": ["tfidf", "--records", "inputs/records.jsonl", "--groups", "inputs/groups.json",
              "--split-year", "2012"],
}


def run_case(name, workdir: Path) -> Path:
    """Run one case inside ``workdir``; returns the output directory."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if not (workdir / "inputs").exists():
        shutil.copytree(INPUTS, workdir / "inputs")
    out = workdir / name
    argv = CASES[name] + ["--out", name]
    cwd = os.getcwd()
    os.chdir(workdir)
    try:
        code = run(argv)
    finally:
        os.chdir(cwd)
    if code != 0:
        raise RuntimeError(f"case {name} exited with {code}")
    return out


def output_files(out: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()}
