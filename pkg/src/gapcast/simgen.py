"""Synthetic panels with known treatment effects and factor confounding."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence, Union

import numpy as np

from .panel import PanelDataset, PanelError

COVARIATE = "TotalNumOfPaper"


@dataclass
class DgpSpec:
    seed: int = 0
    n_units: int = 57
    n_treated: int = 10
    n_periods: int = 20
    onset_period: int = 12           # 1-based position of the first treated period
    r_true: int = 2
    beta_true: Sequence[float] = (1.0,)
    tau: Union[float, Sequence[float]] = 5.0
    sigma: float = 1.0
    confound: float = 1.0
    biannual_fraction: float = 0.0
    first_period: int = 2000

    @property
    def n_post(self) -> int:
        return self.n_periods - self.onset_period + 1

    @property
    def onset_label(self) -> int:
        return self.first_period + self.onset_period - 1

    def tau_path(self) -> np.ndarray:
        tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        if tau.size == 1:
            return np.full(self.n_post, float(tau[0]))
        if tau.size != self.n_post:
            raise PanelError(f"tau path has {tau.size} entries, expected {self.n_post}")
        return tau

    def validate(self) -> None:
        if not 0 < self.n_treated < self.n_units:
            raise PanelError("need 0 < n_treated < n_units")
        if self.onset_period - 1 < 6:
            raise PanelError("onset must leave at least 6 pre-periods")
        if self.onset_period > self.n_periods:
            raise PanelError("onset beyond the last period")
        if self.sigma < 0 or self.confound < 0 or self.r_true < 0:
            raise PanelError("sigma, confound and r_true must be non-negative")
        if not 0.0 <= self.biannual_fraction <= 1.0:
            raise PanelError("biannual_fraction must lie in [0, 1]")
        self.tau_path()

    @classmethod
    def from_json(cls, text: str) -> "DgpSpec":
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise PanelError(f"unknown DgpSpec fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta_true"] = [float(b) for b in np.atleast_1d(self.beta_true)]
        tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        d["tau"] = float(tau[0]) if tau.size == 1 else tau.tolist()
        return d


@dataclass
class GroundTruth:
    tau: np.ndarray                  # effect per post period
    beta_true: np.ndarray
    factors: np.ndarray              # T x r
    loadings: np.ndarray             # N x r
    unit_effects: np.ndarray
    time_effects: np.ndarray
    untreated_outcome: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau.tolist(),
            "beta_true": self.beta_true.tolist(),
            "factors": self.factors.tolist(),
            "loadings": self.loadings.tolist(),
            "unit_effects": self.unit_effects.tolist(),
            "time_effects": self.time_effects.tolist(),
        }


def gen_panel(spec: DgpSpec):
    """Draw a panel from the interactive-fixed-effects model.

    Treated units are the last ``n_treated`` units. Their loadings are
    shifted by ``confound`` and the covariate loads on the factor component
    with weight ``confound / 2``, so two-way fixed effects alone are biased.

    Returns
    -------
    (PanelDataset, GroundTruth)
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, t, r = spec.n_units, spec.n_periods, spec.r_true
    beta = np.atleast_1d(np.asarray(spec.beta_true, dtype=float))
    treated = np.zeros(n, dtype=bool)
    treated[n - spec.n_treated:] = True

    # one draw per block, in a fixed order, so the stream layout never shifts
    factors = rng.standard_normal((t, r))
    loadings = rng.standard_normal((n, r))
    alpha = rng.standard_normal(n)
    eta = rng.standard_normal(t)
    cov_noise = rng.standard_normal((beta.size, n, t))
    eps = rng.standard_normal((n, t))
    biannual_draw = rng.random(n)

    loadings[treated] += spec.confound
    common = loadings @ factors.T
    xs = 5.0 + 0.5 * common[None] * spec.confound + cov_noise
    y0 = (alpha[:, None] + eta[None, :] + common
          + np.tensordot(beta, xs, axes=1) + spec.sigma * eps)
    tau = spec.tau_path()
    y = y0.copy()
    post = np.arange(t) >= spec.onset_period - 1
    y[np.ix_(treated, post)] += tau[None, :]

    mask = np.ones((n, t), dtype=bool)
    n_bi = int(round(spec.biannual_fraction * (n - spec.n_treated)))
    if n_bi:
        # biannual venues are drawn from the controls only
        ctrl = np.flatnonzero(~treated)
        chosen = ctrl[np.argsort(biannual_draw[ctrl], kind="stable")[:n_bi]]
        for k, i in enumerate(chosen):
            mask[i, (np.arange(t) + k) % 2 == 1] = False

    periods = np.arange(spec.first_period, spec.first_period + t)
    width = len(str(n))
    units = [f"u{i:0{width}d}" for i in range(n)]
    names = [COVARIATE] if beta.size == 1 else [f"x{k}" for k in range(beta.size)]
    panel = PanelDataset(
        units=units,
        periods=periods,
        outcome=np.where(mask, y, np.nan),
        mask=mask,
        covariates={nm: np.where(mask, xs[k], np.nan) for k, nm in enumerate(names)},
        treatment_onset={u: (spec.onset_label if treated[i] else None)
                         for i, u in enumerate(units)},
    )
    truth = GroundTruth(tau=tau, beta_true=beta, factors=factors, loadings=loadings,
                        unit_effects=alpha, time_effects=eta, untreated_outcome=y0)
    return panel, truth
