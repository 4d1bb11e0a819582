"""Interactive fixed effects (generalized synthetic control) estimation.

The model for untreated outcomes is

    Y_it = x_it' beta + alpha_i + eta_t + lambda_i' f_t + e_it.

Step 1 fits (beta, alpha, eta, F, Lambda) on control units by alternating
least squares; unobserved control cells are filled with current fitted
values between iterations (EM). Step 2 regresses each treated unit's
pre-onset residuals on [1, f_t] to get its intercept and loadings, which
gives the counterfactual for post-onset cells.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .panel import PanelDataset, PanelError

TOL = 1e-8
MAX_ITER = 2000
DEFAULT_COVARIATES = ("TotalNumOfPaper",)


class EstimationError(ValueError):
    pass


def n_threads(threads: Optional[int] = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("GAPCAST_THREADS")
    return max(1, int(env)) if env else 1


def parallel_map(func, items, threads=None) -> list:
    """Ordered map; result order never depends on the worker count."""
    items = list(items)
    workers = min(n_threads(threads), max(len(items), 1))
    if workers == 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


@dataclass(eq=False)
class FactorModelFit:
    units: tuple
    periods: np.ndarray
    covariate_names: tuple
    beta: dict
    factors: np.ndarray          # T x r, F'F/T = I
    loadings: np.ndarray         # N x r, all panel units
    unit_effects: np.ndarray     # N
    time_effects: np.ndarray     # T
    r: int
    sigma2: float
    iterations: int
    converged: bool
    objective: float
    objective_path: list = field(default_factory=list)
    eta_identified: np.ndarray = None
    flags: list = field(default_factory=list)
    dof: int = 0
    n_obs: int = 0

    def predict(self, panel: PanelDataset) -> np.ndarray:
        """Untreated-outcome fit for every cell (NaN where a covariate is missing)."""
        out = (self.unit_effects[:, None] + self.time_effects[None, :]
               + self.loadings @ self.factors.T)
        for name in self.covariate_names:
            out = out + self.beta[name] * panel.covariates[name]
        return out

    def to_dict(self) -> dict:
        return {
            "units": list(self.units),
            "periods": [int(p) for p in self.periods],
            "covariates": list(self.covariate_names),
            "beta": {k: float(v) for k, v in self.beta.items()},
            "r": self.r,
            "factors": self.factors.tolist(),
            "loadings": self.loadings.tolist(),
            "unit_effects": self.unit_effects.tolist(),
            "time_effects": self.time_effects.tolist(),
            "sigma2": self.sigma2,
            "iterations": self.iterations,
            "converged": self.converged,
            "objective": self.objective,
            "flags": list(self.flags),
        }


@dataclass(eq=False)
class AttResult:
    """Per-cell gaps and their averages for treated post-onset cells.

    ``counterfactual`` and ``observed`` cover every observed treated cell
    (pre-onset included) so observed-vs-fitted series can be drawn.
    """

    gaps: dict                       # (unit, period) -> observed - counterfactual
    att_by_period: dict              # period -> mean gap
    att: float
    se: Optional[float] = None
    ci95: Optional[tuple] = None
    period_se: dict = field(default_factory=dict)
    period_ci: dict = field(default_factory=dict)
    counterfactual: dict = field(default_factory=dict)
    observed: dict = field(default_factory=dict)
    method: str = "gsc"

    def __post_init__(self):
        if (self.se is None) != (self.ci95 is None):
            raise ValueError("se and ci95 must be given together")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "att": self.att,
            "se": self.se,
            "ci95": list(self.ci95) if self.ci95 is not None else None,
            "att_by_period": [
                {"period": int(p), "att": a,
                 "se": self.period_se.get(p),
                 "lo": self.period_ci[p][0] if p in self.period_ci else None,
                 "hi": self.period_ci[p][1] if p in self.period_ci else None}
                for p, a in sorted(self.att_by_period.items())
            ],
            "gaps": [{"unit": u, "period": int(p), "gap": g}
                     for (u, p), g in self.gaps.items()],
        }


@dataclass
class CvResult:
    mspe_by_r: dict
    chosen_r: int

    def to_dict(self) -> dict:
        return {"mspe_by_r": {str(k): v for k, v in self.mspe_by_r.items()},
                "chosen_r": self.chosen_r}


def _two_way_demean(a: np.ndarray) -> np.ndarray:
    return a - a.mean(axis=1, keepdims=True) - a.mean(axis=0, keepdims=True) + a.mean()


def _svd_factors(wd: np.ndarray, r: int):
    """Top-r SVD of a two-way-demeaned block: (F, Lambda, tail sum of squares)."""
    n, t = wd.shape
    if r == 0:
        return np.zeros((t, 0)), np.zeros((n, 0)), float(np.sum(wd * wd))
    u, s, vt = np.linalg.svd(wd, full_matrices=False)
    f = vt[:r].T * np.sqrt(t)
    lam = u[:, :r] * (s[:r] / np.sqrt(t))
    # sign convention for determinism: largest-magnitude factor entry positive
    flip = np.sign(f[np.argmax(np.abs(f), axis=0), np.arange(r)])
    flip[flip == 0] = 1.0
    return f * flip, lam * flip, float(np.sum(s[r:] ** 2))


def _beta_step(xd, yd, f, t):
    """Covariate coefficients with additive effects and factors ``f`` projected out."""
    k = xd.shape[0]
    if f.shape[1]:
        xm = xd - (xd @ f) @ f.T / t
        ym = yd - (yd @ f) @ f.T / t
    else:
        xm, ym = xd, yd
    a = xm.reshape(k, -1)
    gram = a @ a.T
    rhs = a @ ym.ravel()
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(a.T, ym.ravel(), rcond=None)[0]


def _fit_additive_exact(y, mask, xs):
    """r = 0 by direct least squares on observed cells.

    With a single control unit the period effects would absorb every
    observation, so only a unit intercept is kept alongside the covariates.
    """
    n, t = y.shape
    k = xs.shape[0]
    ii, tt = np.nonzero(mask)
    time_fx = n > 1
    n_t = t - 1 if time_fx else 0
    z = np.zeros((len(ii), n + n_t + k))
    z[np.arange(len(ii)), ii] = 1.0
    if time_fx:
        later = tt > 0
        z[np.flatnonzero(later), n + tt[later] - 1] = 1.0
    for c in range(k):
        z[:, n + n_t + c] = xs[c, ii, tt]
    coef = np.linalg.lstsq(z, y[ii, tt], rcond=None)[0]
    alpha = coef[:n]
    eta = np.zeros(t)
    if time_fx:
        eta[1:] = coef[n:n + n_t]
    beta = coef[n + n_t:]
    shift = alpha.mean()
    alpha = alpha - shift
    eta = eta + shift
    resid = y[ii, tt] - z @ coef
    obj = float(resid @ resid)
    return dict(beta=beta, alpha=alpha, eta=eta, F=np.zeros((t, 0)),
                Lambda=np.zeros((n, 0)), objective=obj, path=[obj], iterations=1,
                converged=True)


def fit_controls(y, mask, xs, r, tol=TOL, max_iter=MAX_ITER):
    """Step 1 on a control block.

    ``y`` is N x T with NaN at unobserved cells, ``xs`` a K x N x T stack.
    Alternates beta given F and (F, Lambda, alpha, eta) given beta; each
    is an exact block minimizer, so the objective never increases. On
    unbalanced blocks the unobserved cells are refilled with fitted values
    after every sweep (EM), which keeps that property for the observed-cell
    objective.
    """
    n, t = y.shape
    k = xs.shape[0]
    if r < 0:
        raise EstimationError("r must be non-negative")
    if r > min(n, t) - 1:
        raise EstimationError(
            f"r={r} too large: need r <= min(#controls, #periods) - 1 = {min(n, t) - 1}")
    xf = np.where(mask[None], xs, 0.0)
    balanced = bool(mask.all())
    if r == 0 and (n == 1 or not balanced):
        return _fit_additive_exact(y, mask, xf)
    ss = float(np.sum(y[mask] ** 2))

    # initial fill: period means of observed cells, falling back to the grand mean
    cnt = mask.sum(axis=0)
    col = np.where(cnt > 0, np.where(mask, y, 0.0).sum(axis=0) / np.maximum(cnt, 1),
                   y[mask].mean())
    yf = np.where(mask, y, col[None, :])

    xd = np.stack([_two_way_demean(x) for x in xf]) if k else xf
    yd = _two_way_demean(yf)
    beta = np.zeros(k)
    f = np.zeros((t, 0))
    path = []
    prev = np.inf
    converged = False
    for it in range(1, max_iter + 1):
        if k:
            beta = _beta_step(xd, yd, f, t)
            wd = yd - np.tensordot(beta, xd, axes=1)
        else:
            wd = yd
        f, lam, tail = _svd_factors(wd, r)
        if balanced:
            obj = tail
        else:
            w = yf - np.tensordot(beta, xf, axes=1) if k else yf
            fitted = w - wd + lam @ f.T
            if k:
                fitted = fitted + np.tensordot(beta, xf, axes=1)
            obj = float(np.sum(np.where(mask, y - fitted, 0.0) ** 2))
        path.append(obj)
        if obj <= 1e-26 * max(ss, 1.0) or (np.isfinite(prev) and prev - obj <= tol * prev):
            converged = True
            break
        if balanced and k == 0:
            converged = True
            break
        prev = obj
        if not balanced:
            yf = np.where(mask, y, fitted)
            yd = _two_way_demean(yf)

    w = yf - np.tensordot(beta, xf, axes=1) if k else yf
    eta = w.mean(axis=0)
    alpha = w.mean(axis=1) - w.mean()
    return dict(beta=beta, alpha=alpha, eta=eta, F=f, Lambda=lam, objective=obj,
                path=path, iterations=it, converged=converged)


def _check_covariates(panel: PanelDataset, names) -> tuple:
    names = tuple(names)
    missing = [c for c in names if c not in panel.covariates]
    if missing:
        raise PanelError(f"covariates not in panel: {', '.join(missing)}")
    return names


def fit_ife(panel: PanelDataset, r: int, covariate_names: Sequence[str] = (),
            tol: float = TOL, max_iter: int = MAX_ITER) -> FactorModelFit:
    """Fit the interactive-fixed-effects model with ``r`` factors."""
    names = _check_covariates(panel, covariate_names)
    ctrl = ~panel.treated_index()
    if not ctrl.any():
        raise EstimationError("panel has no control units")
    y = panel.outcome
    xs = (np.stack([panel.covariates[c] for c in names]) if names
          else np.zeros((0,) + y.shape))
    mask = panel.mask
    step1 = fit_controls(y[ctrl], mask[ctrl], xs[:, ctrl], r, tol=tol, max_iter=max_iter)
    beta, eta, f = step1["beta"], step1["eta"], step1["F"]
    eta_ok = mask[ctrl].any(axis=0)

    n = panel.n_units
    alpha = np.zeros(n)
    lam = np.zeros((n, r))
    alpha[ctrl] = step1["alpha"]
    lam[ctrl] = step1["Lambda"]
    flags = []
    sel_all = panel.pre_mask() & eta_ok[None, :]
    resid = y - eta[None, :]
    if names:
        resid = resid - np.tensordot(beta, xs, axes=1)
    # units sharing a pre-period pattern share one design matrix
    patterns: dict = {}
    for i in np.flatnonzero(~ctrl):
        patterns.setdefault(sel_all[i].tobytes(), []).append(i)
    for rows in patterns.values():
        sel = sel_all[rows[0]]
        n_pre = int(sel.sum())
        if n_pre < r + 1:
            raise EstimationError(
                f"treated unit {panel.units[rows[0]]!r} has {n_pre} usable pre-periods; "
                f"need >= r+1 = {r + 1}")
        if n_pre == r + 1:
            flags.extend(f"exactly determined loadings for {panel.units[i]}" for i in rows)
        z = np.column_stack([np.ones(n_pre), f[sel]])
        coef = np.linalg.lstsq(z, resid[np.ix_(rows, np.flatnonzero(sel))].T, rcond=None)[0]
        alpha[rows] = coef[0]
        lam[rows] = coef[1:].T

    n_c, t = int(ctrl.sum()), panel.n_periods
    n_obs = int(mask[ctrl].sum())
    dof = (n_c + t - 1 if n_c > 1 else 1) + len(names) + r * (n_c + t - r)
    sigma2 = step1["objective"] / max(n_obs - dof, 1)
    return FactorModelFit(
        units=panel.units, periods=panel.periods.copy(), covariate_names=names,
        beta=dict(zip(names, map(float, beta))), factors=f, loadings=lam,
        unit_effects=alpha, time_effects=eta, r=r, sigma2=float(sigma2),
        iterations=step1["iterations"], converged=step1["converged"],
        objective=step1["objective"], objective_path=step1["path"],
        eta_identified=eta_ok, flags=flags, dof=dof, n_obs=n_obs)


def post_cells(panel: PanelDataset) -> np.ndarray:
    """Observed treated cells at or after each unit's onset."""
    out = np.zeros_like(panel.mask)
    for i, u in enumerate(panel.units):
        onset = panel.treatment_onset[u]
        if onset is not None:
            out[i] = panel.periods >= onset
    return out & panel.mask


def gap_matrix(fit: FactorModelFit, panel: PanelDataset, post=None):
    """(gaps, post) with gaps = Y - Yhat(0), NaN outside treated post cells."""
    if post is None:
        post = post_cells(panel)
    bad = post & ~fit.eta_identified[None, :]
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise EstimationError(
            f"cannot impute {panel.units[i]!r} at {int(panel.periods[j])}: "
            "no control observed in that period")
    if not post.any():
        raise EstimationError("no observed treated post-onset cells")
    gaps = np.where(post, panel.outcome - fit.predict(panel), np.nan)
    return gaps, post


def impute_and_att(fit: FactorModelFit, panel: PanelDataset) -> AttResult:
    """Counterfactuals and gaps for treated cells."""
    if tuple(fit.units) != tuple(panel.units) or not np.array_equal(fit.periods, panel.periods):
        raise EstimationError("fit was not produced from this panel")
    gaps_m, post = gap_matrix(fit, panel)
    pred = fit.predict(panel)
    gaps, cf, obs = {}, {}, {}
    for i, unit in enumerate(panel.units):
        if panel.treatment_onset[unit] is None:
            continue
        for j in np.flatnonzero(panel.mask[i] & fit.eta_identified):
            key = (unit, int(panel.periods[j]))
            cf[key] = float(pred[i, j])
            obs[key] = float(panel.outcome[i, j])
            if post[i, j]:
                gaps[key] = float(gaps_m[i, j])
    cols = np.flatnonzero(post.any(axis=0))
    att_by_period = {int(panel.periods[j]): float(np.mean(gaps_m[post[:, j], j])) for j in cols}
    att = float(np.mean(gaps_m[post]))
    return AttResult(gaps=gaps, att_by_period=att_by_period, att=att,
                     counterfactual=cf, observed=obs)


def _loo_sq_errors(z: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Leave-one-out squared prediction errors of an OLS fit."""
    q, _ = np.linalg.qr(z)
    h = np.sum(q ** 2, axis=1)
    resid = target - q @ (q.T @ target)
    return (resid / (1.0 - h)) ** 2


def max_feasible_r(panel: PanelDataset) -> int:
    n_c = len(panel.control_units)
    bound = min(n_c, panel.n_periods) - 1
    pre_counts = [panel.n_pre(u) for u in panel.treated_units]
    if pre_counts:
        bound = min(bound, min(pre_counts) - 2)
    return bound


def choose_r(panel: PanelDataset, r_max: int, covariate_names: Sequence[str] = (),
             tol: float = TOL, max_iter: int = MAX_ITER, threads=None) -> CvResult:
    """Pick the factor count by leave-one-out prediction of treated pre-onset cells."""
    names = _check_covariates(panel, covariate_names)
    if r_max < 0:
        raise EstimationError("r_max must be non-negative")
    treated = panel.treated_units
    if not treated:
        raise EstimationError("cross-validation needs at least one treated unit")
    short = [u for u in treated if panel.n_pre(u) < 2]
    if short:
        raise EstimationError(f"treated units with < 2 pre-periods: {short}")
    bound = max_feasible_r(panel)
    if r_max > bound:
        raise EstimationError(
            f"r_max={r_max} exceeds the feasible bound {bound} "
            "(min(#controls, #periods) - 1 and min treated pre-periods - 2)")

    def mspe(r):
        fit = fit_ife(panel, r, names, tol=tol, max_iter=max_iter)
        pre = panel.pre_mask()
        errs = []
        for i, unit in enumerate(panel.units):
            if panel.treatment_onset[unit] is None:
                continue
            sel = pre[i] & fit.eta_identified
            target = panel.outcome[i, sel] - fit.time_effects[sel]
            for name in names:
                target = target - fit.beta[name] * panel.covariates[name][i, sel]
            z = np.column_stack([np.ones(int(sel.sum())), fit.factors[sel]])
            errs.append(_loo_sq_errors(z, target))
        return float(np.mean(np.concatenate(errs)))

    values = parallel_map(mspe, range(r_max + 1), threads)
    table = dict(zip(range(r_max + 1), values))
    best = min(values)
    chosen = next(r for r, v in table.items() if v <= best * (1 + 1e-9) + 1e-20)
    return CvResult(mspe_by_r=table, chosen_r=chosen)

