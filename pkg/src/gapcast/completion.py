"""Nuclear-norm matrix completion (soft-impute) as a counterfactual estimator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ife import AttResult, EstimationError, parallel_map
from .panel import PanelDataset

DEFAULT_LAMBDA_GRID = tuple(np.geomspace(50.0, 0.05, 25))


@dataclass(eq=False)
class CompletionResult:
    completed: np.ndarray
    rank: int
    lam: float
    converged: bool = True
    iterations: int = 0
    objective_path: list = field(default_factory=list)
    cv_table: Optional[dict] = None


def soft_threshold(matrix: np.ndarray, lam: float, return_rank: bool = False):
    """Shrink singular values by ``lam``: U max(S - lam, 0) V'."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    u, s, vt = np.linalg.svd(np.asarray(matrix, dtype=float), full_matrices=False)
    shrunk = np.maximum(s - lam, 0.0)
    k = int(np.count_nonzero(shrunk))
    out = (u[:, :k] * shrunk[:k]) @ vt[:k]
    return (out, k) if return_rank else out


def nuclear_objective(y, mask, z, lam) -> float:
    resid = np.where(mask, y - z, 0.0)
    return 0.5 * float(np.sum(resid ** 2)) + lam * float(np.linalg.svd(z, compute_uv=False).sum())


def _iterate(y, mask, lam, z, tol, max_iter, track_objective):
    path = []
    converged = False
    rank = 0
    it = 0
    for it in range(1, max_iter + 1):
        znew, rank = soft_threshold(np.where(mask, y, z), lam, return_rank=True)
        if track_objective:
            path.append(nuclear_objective(y, mask, znew, lam))
        denom = np.linalg.norm(z)
        change = np.linalg.norm(znew - z)
        z = znew
        if change <= tol * max(denom, 1e-300) or change == 0.0:
            converged = True
            break
    return z, rank, converged, it, path


def soft_impute(outcome: np.ndarray, mask: np.ndarray, lam: float, tol: float = 1e-6,
                max_iter: int = 5000, init: Optional[np.ndarray] = None,
                track_objective: bool = False, path_steps: int = 6) -> CompletionResult:
    """Iterate Z <- soft_threshold(P_obs(Y) + P_unobs(Z), lam) until the
    relative Frobenius change drops below ``tol``.

    Without ``init`` the solver first walks a geometric lambda path from
    the largest singular value of the observed data down to ``lam``
    (``path_steps`` points per decade), warm-starting each stage. A cold
    start at a tiny ``lam`` otherwise leaves unobserved cells near zero for
    a very long time. ``max_iter`` bounds each stage; ``objective_path``
    covers the final stage only.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all() or not mask.any(axis=0).all():
        raise EstimationError("every row and column needs at least one observed entry")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    y = np.where(mask, outcome, 0.0)
    total = 0
    if init is None:
        z = np.zeros_like(y)
        smax = float(np.linalg.svd(y, compute_uv=False)[0]) if y.size else 0.0
        if path_steps > 0 and smax > lam > 0:
            n = int(np.ceil(np.log10(smax / lam) * path_steps))
            for stage in np.geomspace(smax, lam, n + 1)[1:-1]:
                z, _, _, its, _ = _iterate(y, mask, stage, z, tol, max_iter, False)
                total += its
    else:
        z = np.array(init, dtype=float)
    z, rank, converged, its, path = _iterate(y, mask, lam, z, tol, max_iter, track_objective)
    return CompletionResult(completed=z, rank=rank, lam=float(lam), converged=converged,
                            iterations=total + its, objective_path=path)


def _fold_masks(mask, ctrl_rows, folds, seed):
    """Hold out ~10% of observed control cells per fold, keeping every row/column covered."""
    rng = np.random.default_rng(seed)
    cells = np.argwhere(mask & ctrl_rows[:, None])
    order = rng.permutation(len(cells))
    size = max(1, int(round(0.1 * len(cells))))
    out = []
    for k in range(folds):
        pick = cells[order[(k * size) % len(cells):][:size]]
        held = np.zeros_like(mask)
        held[pick[:, 0], pick[:, 1]] = True
        train = mask & ~held
        # give back cells that would leave a row or column empty
        for i in np.flatnonzero(~train.any(axis=1)):
            held[i] &= False
        for j in np.flatnonzero(~train.any(axis=0)):
            held[:, j] &= False
        out.append((mask & ~held, held))
    return out


def cv_lambda(y, train_mask, ctrl_rows, lambda_grid, cv_folds=5, seed=0,
              tol=1e-6, max_iter=5000, threads=None) -> dict:
    """Held-out MSE on observed control cells for every lambda in the grid."""
    grid = sorted({float(v) for v in lambda_grid}, reverse=True)
    folds = _fold_masks(train_mask, ctrl_rows, cv_folds, seed)

    def run_fold(fold):
        train, held = fold
        errs, z = {}, None
        # warm start down the decreasing grid
        for lam in grid:
            res = soft_impute(y, train, lam, tol=tol, max_iter=max_iter, init=z)
            z = res.completed
            errs[lam] = float(np.mean((y[held] - z[held]) ** 2)) if held.any() else 0.0
        return errs

    per_fold = parallel_map(run_fold, folds, threads)
    return {lam: float(np.mean([f[lam] for f in per_fold])) for lam in grid}


def mc_att(panel: PanelDataset, lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
           cv_folds: int = 5, seed: int = 0, tol: float = 1e-6, max_iter: int = 5000,
           threads=None, center: bool = True):
    """ATT from matrix completion with treated post-onset cells masked out.

    With ``center`` the matrix is shifted by the mean of its training cells
    before completion, so the shrinkage penalty never touches that overall
    level. ``center=False`` gives the pure low-rank form.

    Returns (AttResult, CompletionResult). ``completed`` is in outcome
    units; ``rank`` refers to the centred iterate. ``cv_table`` maps each
    lambda to its mean held-out MSE.
    """
    if not len(lambda_grid):
        raise EstimationError("lambda_grid is empty")
    if cv_folds < 2:
        raise EstimationError("cv_folds must be >= 2")
    treated_post = np.zeros_like(panel.mask)
    for i, u in enumerate(panel.units):
        onset = panel.treatment_onset[u]
        if onset is not None:
            treated_post[i] = panel.periods >= onset
    train = panel.mask & ~treated_post
    ctrl = ~panel.treated_index()
    level = float(panel.outcome[train].mean()) if center else 0.0
    y = np.where(panel.mask, panel.outcome - level, 0.0)
    table = cv_lambda(y, train, ctrl, lambda_grid, cv_folds, seed, tol, max_iter, threads)
    best = min(table.values())
    lam = max(l for l, v in table.items() if v == best)
    comp = soft_impute(y, train, lam, tol=tol, max_iter=max_iter)
    comp.cv_table = table
    comp.completed = comp.completed + level

    gaps, cf, obs, by_period = {}, {}, {}, {}
    z = comp.completed
    for i, unit in enumerate(panel.units):
        onset = panel.treatment_onset[unit]
        if onset is None:
            continue
        for j in np.flatnonzero(panel.mask[i]):
            period = int(panel.periods[j])
            cf[(unit, period)] = float(z[i, j])
            obs[(unit, period)] = float(panel.outcome[i, j])
            if period >= onset:
                g = float(panel.outcome[i, j] - z[i, j])
                gaps[(unit, period)] = g
                by_period.setdefault(period, []).append(g)
    if not gaps:
        raise EstimationError("no observed treated post-onset cells")
    result = AttResult(
        gaps=gaps, att_by_period={p: float(np.mean(v)) for p, v in sorted(by_period.items())},
        att=float(np.mean(list(gaps.values()))), counterfactual=cf, observed=obs,
        method="mc")
    return result, comp
