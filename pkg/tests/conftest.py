import io
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gapcast.panel import PanelDataset, load_panel  # noqa: E402

DATA = Path(__file__).parent / "data"

# filled by test_acceptance; printed once at the end of the session
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def make_panel(outcome, onset=None, covariates=None, periods=None, units=None):
    outcome = np.asarray(outcome, dtype=float)
    n, t = outcome.shape
    units = units or [f"u{i + 1}" for i in range(n)]
    periods = np.arange(1, t + 1) if periods is None else np.asarray(periods)
    mask = ~np.isnan(outcome)
    covs = {k: np.where(mask, np.asarray(v, dtype=float), np.nan)
            for k, v in (covariates or {}).items()}
    return PanelDataset(units=units, periods=periods, outcome=outcome, mask=mask,
                        covariates=covs, treatment_onset=onset or {})


@pytest.fixture
def worked_example():
    """Two controls and one treated unit with onset at period 3."""
    return make_panel([[1, 2, 3, 4], [3, 4, 5, 6], [2, 3, 10, 11]], onset={"u3": 3})


@pytest.fixture
def csv_panel():
    def _load(text):
        return load_panel(io.StringIO(text))
    return _load
