"""Plot-ready tables built from an ATT estimate."""

from __future__ import annotations

import numpy as np

from .ife import AttResult


def att_by_period_rows(att: AttResult) -> list:
    return [(p, a, att.period_se.get(p),
             att.period_ci.get(p, (None, None))[0], att.period_ci.get(p, (None, None))[1])
            for p, a in sorted(att.att_by_period.items())]


def observed_vs_counterfactual(att: AttResult) -> list:
    """(period, mean observed treated outcome, mean counterfactual) over all treated cells."""
    by_period: dict = {}
    for (unit, period), cf in att.counterfactual.items():
        by_period.setdefault(period, []).append((att.observed[(unit, period)], cf))
    return [(p, float(np.mean([o for o, _ in v])), float(np.mean([c for _, c in v])))
            for p, v in sorted(by_period.items())]


def gap_rows(att: AttResult) -> list:
    return [(p, a, att.period_ci.get(p, (None, None))[0], att.period_ci.get(p, (None, None))[1])
            for p, a in sorted(att.att_by_period.items())]


def report(att: AttResult, fit=None) -> dict:
    """Tables for redrawing observed-vs-counterfactual and gap figures.

    ``fit`` is accepted for symmetry with the estimators; the counterfactual
    values already live on ``att``.
    """
    return {
        "observed_vs_counterfactual": (
            ["period", "mean_observed_treated", "mean_counterfactual"],
            observed_vs_counterfactual(att)),
        "gap": (["period", "att", "lo", "hi"], gap_rows(att)),
    }


def att_to_record(att: AttResult) -> dict:
    """JSON form of an AttResult including the per-cell series ``report`` needs."""
    d = att.to_dict()
    d["cells"] = [{"unit": u, "period": int(p), "observed": att.observed[(u, p)],
                   "counterfactual": cf}
                  for (u, p), cf in att.counterfactual.items()]
    return d


def att_from_record(d: dict) -> AttResult:
    gaps = {(g["unit"], int(g["period"])): float(g["gap"]) for g in d["gaps"]}
    by_period, se, ci = {}, {}, {}
    for row in d["att_by_period"]:
        p = int(row["period"])
        by_period[p] = float(row["att"])
        if row.get("se") is not None:
            se[p] = float(row["se"])
        if row.get("lo") is not None:
            ci[p] = (float(row["lo"]), float(row["hi"]))
    cells = d.get("cells", [])
    return AttResult(
        gaps=gaps, att_by_period=by_period, att=float(d["att"]),
        se=d.get("se"), ci95=tuple(d["ci95"]) if d.get("ci95") is not None else None,
        period_se=se, period_ci=ci,
        counterfactual={(c["unit"], int(c["period"])): float(c["counterfactual"]) for c in cells},
        observed={(c["unit"], int(c["period"])): float(c["observed"]) for c in cells},
        method=d.get("method", "gsc"))
