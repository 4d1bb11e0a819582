"""Unit fixed-effects regression with a treatment x compute interaction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .ife import EstimationError
from .panel import PanelDataset, PanelError, treatment_matrix

TREAT = "ImageNet2012"
COMPUTE = "Compute"
INTERACTION = "ImageNetXCompute"


@dataclass
class RegressionFit:
    coefficients: dict
    standard_errors: dict
    r_squared: float
    r_squared_within: float
    n: int
    n_units: int
    dof_resid: int

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients,
            "standard_errors": self.standard_errors,
            "r_squared": self.r_squared,
            "r_squared_within": self.r_squared_within,
            "n": self.n,
            "n_units": self.n_units,
            "dof_resid": self.dof_resid,
        }

    def table(self, title: str = "Outcome") -> str:
        """Plain-text coefficient table: estimate over (standard error)."""
        width = max(len(k) for k in self.coefficients) + 2
        lines = [f"{'':{width}}{title:>14}", "-" * (width + 14)]
        for name, coef in self.coefficients.items():
            lines.append(f"{name:<{width}}{coef:>14.4f}")
            lines.append(f"{'':{width}}{'(' + format(self.standard_errors[name], '.4f') + ')':>14}")
        lines += ["-" * (width + 14),
                  f"{'Unit FE':<{width}}{'Yes':>14}",
                  f"{'Observations':<{width}}{self.n:>14d}",
                  f"{'R2':<{width}}{self.r_squared:>14.3f}"]
        return "\n".join(lines) + "\n"


def load_compute(source) -> dict:
    """Read a ``period,compute`` CSV into {period: value}."""
    df = pd.read_csv(source)
    if list(df.columns[:2]) != ["period", "compute"]:
        raise PanelError("compute CSV needs columns period,compute")
    series = dict(zip(df["period"].astype(int), df["compute"].astype(float)))
    if any(v <= 0 for v in series.values()):
        raise PanelError("compute values must be strictly positive")
    return series


def _collinear_columns(x: np.ndarray, names: list) -> list:
    bad = []
    keep = []
    for j in range(x.shape[1]):
        trial = x[:, keep + [j]]
        if np.linalg.matrix_rank(trial) <= len(keep):
            bad.append(names[j])
        else:
            keep.append(j)
    return bad


def design(panel: PanelDataset, compute: Mapping[int, float],
           covariates: Sequence[str] = ("TotalNumOfPaper",), log_compute: bool = False):
    """Long-format regressors for observed cells: (y, X, unit codes, names)."""
    missing = [int(p) for p in panel.periods if int(p) not in compute]
    if missing:
        raise PanelError(f"compute series lacks periods {missing}")
    bad = [c for c in covariates if c not in panel.covariates]
    if bad:
        raise PanelError(f"covariates not in panel: {bad}")
    comp = np.array([float(compute[int(p)]) for p in panel.periods])
    if np.any(comp <= 0):
        raise PanelError("compute values must be strictly positive")
    if log_compute:
        comp = np.log(comp)
    delta = treatment_matrix(panel).values.astype(float)
    ii, tt = np.nonzero(panel.mask)
    cols = {TREAT: delta[ii, tt]}
    for c in covariates:
        cols[c] = panel.covariates[c][ii, tt]
    cols[COMPUTE] = comp[tt]
    cols[INTERACTION] = comp[tt] * delta[ii, tt]
    names = list(cols)
    return panel.outcome[ii, tt], np.column_stack([cols[n] for n in names]), ii, names


def _demean_by(a: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    counts = np.bincount(groups, minlength=n_groups)
    if a.ndim == 1:
        means = np.bincount(groups, weights=a, minlength=n_groups) / counts
        return a - means[groups]
    means = np.stack([np.bincount(groups, weights=col, minlength=n_groups)
                      for col in a.T], axis=1) / counts[:, None]
    return a - means[groups]


def within_ols(panel: PanelDataset, compute: Mapping[int, float],
               covariates: Sequence[str] = ("TotalNumOfPaper",),
               log_compute: bool = False) -> RegressionFit:
    """OLS on within-unit demeaned data (unit effects absorbed, no time effects).

    Standard errors are classical homoskedastic ones with the unit
    effects counted in the residual degrees of freedom.
    """
    y, x, groups, names = design(panel, compute, covariates, log_compute)
    n_units = panel.n_units
    counts = np.bincount(groups, minlength=n_units)
    if np.any(counts < 2):
        short = [panel.units[i] for i in np.flatnonzero(counts < 2)]
        raise PanelError(f"units with fewer than 2 observed periods: {short}")
    xd = _demean_by(x, groups, n_units)
    yd = _demean_by(y, groups, n_units)
    scale = np.maximum(np.abs(xd).max(axis=0), 1e-300)
    if np.linalg.matrix_rank(xd / scale) < xd.shape[1] or np.any(np.abs(xd).max(axis=0) == 0):
        bad = _collinear_columns(xd / scale, names)
        raise EstimationError(f"rank-deficient design; collinear or degenerate columns: {bad}")
    coef, *_ = np.linalg.lstsq(xd, yd, rcond=None)
    resid = yd - xd @ coef
    n, k = xd.shape
    dof = n - k - n_units
    if dof <= 0:
        raise EstimationError("no residual degrees of freedom")
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(xd.T @ xd)
    ssr = float(resid @ resid)
    sst = float(np.sum((y - y.mean()) ** 2))
    sst_within = float(yd @ yd)
    return RegressionFit(
        coefficients={nm: float(c) for nm, c in zip(names, coef)},
        standard_errors={nm: float(np.sqrt(v)) for nm, v in zip(names, np.diag(cov))},
        r_squared=1.0 - ssr / sst if sst > 0 else 1.0,
        r_squared_within=1.0 - ssr / sst_within if sst_within > 0 else 1.0,
        n=n, n_units=n_units, dof_resid=dof)


def marginal_effect(fit, delta_compute: float) -> float:
    """Outcome change per year from a ``delta_compute`` rise in compute after onset.

    ``fit`` is a RegressionFit or the interaction coefficient itself.
    """
    coef = fit.coefficients[INTERACTION] if isinstance(fit, RegressionFit) else float(fit)
    return coef * delta_compute
