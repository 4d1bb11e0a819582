"""Blocked parametric bootstrap for the ATT and placebo diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ife import (EstimationError, AttResult, FactorModelFit, fit_ife, gap_matrix,
                  impute_and_att, parallel_map, post_cells)
from .panel import PanelDataset, PanelError

MAX_DRAWS_PER_REPLICATE = 10
MIN_REPLICATES_FOR_CI = 100


@dataclass(frozen=True)
class BootstrapSpec:
    replicates: int = 2000
    seed: int = 0
    ci_level: float = 0.95
    method: str = "percentile"

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.method != "percentile":
            raise ValueError("only percentile intervals are supported")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def rng(self, replicate: int, attempt: int = 0) -> np.random.Generator:
        # stream depends only on (seed, replicate, attempt), never on scheduling
        return np.random.default_rng([self.seed, replicate, attempt])


@dataclass(eq=False)
class BootstrapRun:
    result: AttResult
    draws: np.ndarray                # pooled ATT per replicate
    period_draws: dict               # period -> array of per-replicate ATT
    redraws: int


@dataclass(eq=False)
class PlaceboReport:
    att_result: AttResult
    p_value: float
    window: tuple
    kind: str
    draws: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "window": [int(w) for w in self.window],
                "p_value": self.p_value, "att": self.att_result.to_dict()}


def _donors(mask: np.ndarray, ctrl: np.ndarray) -> list:
    """Per unit, the controls whose observed periods cover that unit's."""
    ctrl_idx = np.flatnonzero(ctrl)
    out = []
    for row in mask:
        cover = [j for j in ctrl_idx if np.all(mask[j] | ~row)]
        if not cover:
            # no full cover: fall back to the controls missing the fewest needed cells
            miss = [np.sum(row & ~mask[j]) for j in ctrl_idx]
            cover = list(ctrl_idx[np.asarray(miss) == min(miss)])
        out.append(np.asarray(cover))
    return out


class _Simulator:
    """Rebuilds outcome panels from a fitted model plus block-resampled residuals."""

    def __init__(self, panel: PanelDataset, fit: FactorModelFit, att: AttResult):
        self.panel = panel
        ctrl = ~panel.treated_index()
        base = fit.predict(panel)
        for (unit, period), g in att.gaps.items():
            base[panel.unit_index(unit), panel.period_index(period)] += g
        # treated cells outside the imputable range keep their observed value
        self.base = np.where(np.isnan(base) & panel.mask, panel.outcome, base)
        resid = np.where(panel.mask, panel.outcome - fit.predict(panel), 0.0)
        resid[~ctrl] = 0.0
        # residual vectors are rescaled for the degrees of freedom used by the fit
        scale = np.sqrt(fit.n_obs / max(fit.n_obs - fit.dof, 1))
        self.resid = resid * scale
        self.donors = _donors(panel.mask, ctrl)

    def draw(self, rng: np.random.Generator) -> PanelDataset:
        n = self.panel.n_units
        picks = np.array([d[rng.integers(len(d))] for d in self.donors]) if n else []
        y = self.base + self.resid[picks]
        y = np.where(self.panel.mask, y, np.nan)
        return self.panel.replace(outcome=y)


def _run_bootstrap(panel, r, covariates, spec, threads=None) -> BootstrapRun:
    fit = fit_ife(panel, r, covariates)
    if not fit.converged:
        raise EstimationError("point estimate did not converge")
    point = impute_and_att(fit, panel)
    sim = _Simulator(panel, fit, point)
    post = post_cells(panel)
    cols = np.flatnonzero(post.any(axis=0))
    counts = post[:, cols].sum(axis=0)

    def replicate(b):
        for attempt in range(MAX_DRAWS_PER_REPLICATE):
            fake = sim.draw(spec.rng(b, attempt))
            bfit = fit_ife(fake, r, covariates)
            if bfit.converged:
                gaps, _ = gap_matrix(bfit, fake, post)
                g = np.where(post, gaps, 0.0)
                by_period = g[:, cols].sum(axis=0) / counts
                return float(g.sum() / post.sum()), by_period, attempt
        return None

    out = parallel_map(replicate, range(spec.replicates), threads)
    if any(o is None for o in out):
        raise EstimationError(
            f"bootstrap exhausted {MAX_DRAWS_PER_REPLICATE} draws for a replicate "
            "without convergence")
    draws = np.array([o[0] for o in out])
    periods = [int(panel.periods[j]) for j in cols]
    stacked = np.array([o[1] for o in out])
    period_draws = {p: stacked[:, k] for k, p in enumerate(periods)}
    redraws = sum(o[2] for o in out)

    if spec.replicates < MIN_REPLICATES_FOR_CI:
        # too few draws for a percentile interval; draws are still returned
        return BootstrapRun(point, draws, period_draws, redraws)
    lo_q, hi_q = (1 - spec.ci_level) / 2, 1 - (1 - spec.ci_level) / 2
    se = float(np.std(draws, ddof=1)) if len(draws) > 1 else 0.0
    ci = tuple(float(q) for q in np.quantile(draws, [lo_q, hi_q]))
    point.se, point.ci95 = se, ci
    for p in periods:
        d = period_draws[p]
        point.period_se[p] = float(np.std(d, ddof=1)) if len(d) > 1 else 0.0
        point.period_ci[p] = tuple(float(q) for q in np.quantile(d, [lo_q, hi_q]))
    return BootstrapRun(point, draws, period_draws, redraws)


def bootstrap_att(panel: PanelDataset, r: int, covariates: Sequence[str] = (),
                  spec: BootstrapSpec = BootstrapSpec(), threads=None,
                  return_draws: bool = False):
    """Point ATT from the original fit, with bootstrap SE and percentile CI.

    Each replicate rebuilds every unit as fitted counterfactual (+ estimated
    gap for treated post-onset cells) + the residual vector of a control unit
    drawn with replacement, then refits. Fewer than 100 replicates leave
    se and ci95 unset.
    """
    run = _run_bootstrap(panel, r, covariates, spec, threads)
    return run if return_draws else run.result


def bootstrap_p_value(att: float, draws: np.ndarray) -> float:
    """Two-sided share of centred replicates at least as extreme as ``att``."""
    centred = draws - att
    return float(np.mean(np.abs(centred) >= abs(att)))


def placebo_in_space(panel: PanelDataset, pseudo_treated: Sequence, onset: int,
                     r: int, covariates: Sequence[str] = (),
                     spec: BootstrapSpec = BootstrapSpec(), threads=None) -> PlaceboReport:
    """Pretend some never-treated units were treated at ``onset``.

    Genuinely treated units are dropped before estimation.
    """
    pseudo = list(pseudo_treated)
    if not pseudo:
        raise PanelError("pseudo-treated set is empty")
    unknown = [u for u in pseudo if u not in panel.units]
    if unknown:
        raise PanelError(f"unknown units: {unknown}")
    overlap = [u for u in pseudo if panel.treatment_onset[u] is not None]
    if overlap:
        raise PanelError(f"pseudo-treated units are genuinely treated: {overlap}")
    sub = panel.subset(panel.control_units)
    onsets = {u: (onset if u in pseudo else None) for u in sub.units}
    sub = sub.replace(treatment_onset=onsets)
    if not sub.control_units:
        raise PanelError("no control units left besides the pseudo-treated")
    run = _run_bootstrap(sub, r, covariates, spec, threads)
    p = bootstrap_p_value(run.result.att, run.draws)
    window = (onset, int(sub.periods[-1]))
    return PlaceboReport(run.result, p, window, "in-space", run.draws)


def placebo_in_time(panel: PanelDataset, shift_years: int, r: int,
                    covariates: Sequence[str] = (), spec: BootstrapSpec = BootstrapSpec(),
                    min_pre: int = 6, threads=None) -> PlaceboReport:
    """Move every treated unit's onset ``shift_years`` earlier.

    All periods from the earliest true onset on are removed, so the pseudo
    window is predicted out of sample.
    """
    if shift_years not in (2, 3, 4):
        raise PanelError("shift_years must be 2, 3 or 4")
    treated = panel.treated_units
    if not treated:
        raise PanelError("panel has no treated units")
    true_onset = min(panel.treatment_onset[u] for u in treated)
    keep = [int(p) for p in panel.periods if p < true_onset]
    sub = panel.subset(periods=keep)
    onsets = {}
    for u in sub.units:
        o = panel.treatment_onset[u]
        onsets[u] = None if o is None else o - shift_years
    sub = sub.replace(treatment_onset=onsets)
    for u in treated:
        n_pre = sub.n_pre(u)
        if n_pre < min_pre:
            raise PanelError(
                f"unit {u!r} has {n_pre} pre-periods before {onsets[u]}; need {min_pre}")
    run = _run_bootstrap(sub, r, covariates, spec, threads)
    p = bootstrap_p_value(run.result.att, run.draws)
    window = (true_onset - shift_years, true_onset - 1)
    return PlaceboReport(run.result, p, window, "in-time", run.draws)
