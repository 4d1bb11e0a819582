"""Rebuild the CLI golden files under tests/data/golden.

Run from the repository root after an intentional output change:

    python3 scripts/regen_golden.py
"""

import shutil
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from golden_cases import CASES, GOLDEN, INPUTS, run_case  # noqa: E402


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        # the simulated panel is itself an input for the estimation cases
        sim = run_case("simulate", tmp / "seed")
        shutil.copy(sim / "panel.csv", INPUTS / "sim_panel.csv")
        if GOLDEN.exists():
            shutil.rmtree(GOLDEN)
        for name in CASES:
            out = run_case(name, tmp / "runs")
            shutil.copytree(out, GOLDEN / name)
            print(f"{name}: {len(list(out.iterdir()))} files", flush=True)


if __name__ == "__main__":
    main()
