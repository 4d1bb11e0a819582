"""Unbalanced unit x period panels with a treatment-onset map."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Mapping, Optional, TextIO

import numpy as np
import pandas as pd


class PanelError(ValueError):
    """Raised when panel input is malformed or fails validation."""


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Outcome and covariate matrices (units x periods) sharing one observation mask.

    Unobserved cells hold NaN in ``outcome`` and every covariate matrix.
    ``treatment_onset`` maps each unit to its first treated period, or None
    for never-treated units.
    """

    units: tuple
    periods: np.ndarray
    outcome: np.ndarray
    mask: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    treatment_onset: Mapping[str, Optional[int]] = field(default_factory=dict)

    def __post_init__(self):
        periods = np.asarray(self.periods, dtype=np.int64)
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "units", tuple(self.units))
        n, t = len(self.units), len(periods)
        if len(set(self.units)) != n:
            raise PanelError("duplicate unit identifiers")
        if t and np.any(np.diff(periods) <= 0):
            raise PanelError("periods must be strictly increasing")
        if self.outcome.shape != (n, t) or self.mask.shape != (n, t):
            raise PanelError(f"outcome/mask must have shape {(n, t)}")
        for name, mat in self.covariates.items():
            if mat.shape != (n, t):
                raise PanelError(f"covariate {name!r} must have shape {(n, t)}")
            if np.any(np.isnan(mat[self.mask])):
                raise PanelError(f"covariate {name!r} missing at an observed cell")
        if np.any(np.isnan(self.outcome[self.mask])):
            raise PanelError("outcome missing at an observed cell")
        onset = {u: self.treatment_onset.get(u) for u in self.units}
        object.__setattr__(self, "treatment_onset", onset)
        if n and all(o is not None for o in onset.values()):
            raise PanelError("panel has no control (never-treated) units")
        for arr in [self.outcome, self.mask, *self.covariates.values()]:
            arr.setflags(write=False)

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @property
    def treated_units(self) -> list:
        return [u for u in self.units if self.treatment_onset[u] is not None]

    @property
    def control_units(self) -> list:
        return [u for u in self.units if self.treatment_onset[u] is None]

    def treated_index(self) -> np.ndarray:
        return np.array([self.treatment_onset[u] is not None for u in self.units])

    def unit_index(self, unit) -> int:
        return self.units.index(unit)

    def period_index(self, period: int) -> int:
        idx = np.searchsorted(self.periods, period)
        if idx >= len(self.periods) or self.periods[idx] != period:
            raise KeyError(period)
        return int(idx)

    def pre_mask(self) -> np.ndarray:
        """Observed cells strictly before each treated unit's onset (all cells for controls)."""
        out = self.mask.copy()
        for i, u in enumerate(self.units):
            onset = self.treatment_onset[u]
            if onset is not None:
                out[i] &= self.periods < onset
        return out

    def n_pre(self, unit) -> int:
        onset = self.treatment_onset[unit]
        row = self.mask[self.unit_index(unit)]
        if onset is None:
            return int(row.sum())
        return int(row[self.periods < onset].sum())

    def subset(self, units=None, periods=None) -> "PanelDataset":
        """Restrict to the given units and/or periods, preserving order."""
        ui = np.arange(self.n_units) if units is None else np.array(
            [self.unit_index(u) for u in units], dtype=int)
        if periods is None:
            ti = np.arange(self.n_periods)
        else:
            ti = np.array([self.period_index(p) for p in periods], dtype=int)
        keep = [self.units[i] for i in ui]
        return PanelDataset(
            units=keep,
            periods=self.periods[ti],
            outcome=self.outcome[np.ix_(ui, ti)].copy(),
            mask=self.mask[np.ix_(ui, ti)].copy(),
            covariates={k: v[np.ix_(ui, ti)].copy() for k, v in self.covariates.items()},
            treatment_onset={u: self.treatment_onset[u] for u in keep},
        )

    def replace(self, **changes) -> "PanelDataset":
        kw = dict(
            units=self.units,
            periods=self.periods,
            outcome=self.outcome.copy(),
            mask=self.mask.copy(),
            covariates={k: v.copy() for k, v in self.covariates.items()},
            treatment_onset=dict(self.treatment_onset),
        )
        kw.update(changes)
        return PanelDataset(**kw)

    def with_mask(self, mask: np.ndarray) -> "PanelDataset":
        """Drop cells outside ``mask`` (intersected with the current mask)."""
        mask = self.mask & mask
        outcome = np.where(mask, self.outcome, np.nan)
        covs = {k: np.where(mask, v, np.nan) for k, v in self.covariates.items()}
        return self.replace(outcome=outcome, mask=mask, covariates=covs)

    def to_frame(self) -> pd.DataFrame:
        """Long-format frame of observed cells, one row per (unit, period)."""
        ii, tt = np.nonzero(self.mask)
        data = {
            "unit": [self.units[i] for i in ii],
            "period": self.periods[tt],
            "outcome": self.outcome[ii, tt],
        }
        for name, mat in self.covariates.items():
            data[name] = mat[ii, tt]
        if any(v is not None for v in self.treatment_onset.values()):
            data["treated_since"] = pd.array(
                [self.treatment_onset[self.units[i]] for i in ii], dtype="Int64")
        return pd.DataFrame(data)


@dataclass(frozen=True, eq=False)
class TreatmentMatrix:
    units: tuple
    periods: np.ndarray
    values: np.ndarray


REQUIRED_COLUMNS = ("unit", "period", "outcome")


def load_panel(source) -> PanelDataset:
    """Read a long-format CSV panel.

    Parameters
    ----------
    source : path or text stream
        Columns ``unit,period,outcome`` plus optional covariates and an
        optional ``treated_since`` column (blank for never-treated units).
        Absent (unit, period) rows become unobserved cells.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
    if not text.strip():
        raise PanelError("no rows")
    try:
        df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise PanelError("no rows") from None
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise PanelError(f"missing required columns: {', '.join(missing)}")
    if len(df) == 0:
        raise PanelError("no rows")
    df.columns = [c.strip() for c in df.columns]
    df["unit"] = df["unit"].str.strip()

    # line numbers count the header as line 1
    def numeric(col, integer=False, allow_blank=False):
        raw = df[col].str.strip()
        vals = pd.to_numeric(raw.replace("", np.nan) if allow_blank else raw,
                             errors="coerce")
        bad = vals.isna() & ~(raw.eq("") & allow_blank)
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise PanelError(
                f"non-numeric {col} {df[col].iloc[row]!r} at row {row + 2}")
        # to_numeric's fast parser is not correctly rounded; float() is
        ok_rows = vals.notna()
        vals[ok_rows] = raw[ok_rows].astype(float)
        if integer:
            ok = vals.dropna()
            if np.any(ok != np.round(ok)):
                row = int(np.flatnonzero((vals != np.round(vals)) & vals.notna())[0])
                raise PanelError(f"non-integer {col} at row {row + 2}")
        return vals

    period = numeric("period", integer=True).astype(np.int64)
    outcome = numeric("outcome").astype(float)
    cov_names = [c for c in df.columns
                 if c not in REQUIRED_COLUMNS and c != "treated_since"]
    covs = {c: numeric(c).astype(float) for c in cov_names}
    treated = (numeric("treated_since", integer=True, allow_blank=True)
               if "treated_since" in df.columns else None)

    keys = pd.DataFrame({"unit": df["unit"], "period": period})
    dup = keys.duplicated(keep="first")
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        raise PanelError(
            f"duplicate cell (unit={keys['unit'].iloc[row]}, "
            f"period={keys['period'].iloc[row]}) at row {row + 2}")

    units = list(dict.fromkeys(df["unit"]))
    periods = np.unique(period.to_numpy())
    uidx = {u: i for i, u in enumerate(units)}
    ii = np.array([uidx[u] for u in df["unit"]], dtype=int)
    tt = np.searchsorted(periods, period.to_numpy())
    shape = (len(units), len(periods))
    mask = np.zeros(shape, dtype=bool)
    mask[ii, tt] = True

    def scatter(vals):
        mat = np.full(shape, np.nan)
        mat[ii, tt] = vals.to_numpy()
        return mat

    onset = {u: None for u in units}
    if treated is not None:
        for u, grp in treated.groupby(df["unit"], sort=False):
            vals = set(grp.dropna().astype(int))
            if len(vals) > 1:
                raise PanelError(f"unit {u!r} has inconsistent treated_since values")
            if vals and len(grp.dropna()) != len(grp):
                raise PanelError(f"unit {u!r} has blank treated_since on some rows")
            onset[u] = vals.pop() if vals else None

    return PanelDataset(
        units=units,
        periods=periods,
        outcome=scatter(outcome),
        mask=mask,
        covariates={c: scatter(v) for c, v in covs.items()},
        treatment_onset=onset,
    )


def write_panel(panel: PanelDataset, dest: TextIO) -> None:
    """Inverse of :func:`load_panel`; floats at 17 significant digits."""
    panel.to_frame().to_csv(dest, index=False, float_format="%.17g",
                            lineterminator="\n")


def panel_report(panel: PanelDataset, dropped_units=()) -> dict:
    return {
        "dropped_units": list(dropped_units),
        "n_units": panel.n_units,
        "n_treated": len(panel.treated_units),
        "n_periods": panel.n_periods,
        "n_observed_cells": int(panel.mask.sum()),
    }


def validate_and_filter(panel: PanelDataset, min_pre: int = 6,
                        min_cells_per_unit_period_group: int = 0,
                        size_covariate: str = "TotalNumOfPaper",
                        small_cell_policy: str = "cell"):
    """Drop treated units with too little pre-onset history.

    Cells whose ``size_covariate`` falls below
    ``min_cells_per_unit_period_group`` are removed first; with
    ``small_cell_policy="unit"`` the whole unit goes instead.

    Returns
    -------
    (PanelDataset, dict)
        Filtered panel and a JSON-ready report.
    """
    if min_pre < 1:
        raise PanelError("min_pre must be >= 1")
    if small_cell_policy not in ("cell", "unit"):
        raise PanelError("small_cell_policy must be 'cell' or 'unit'")
    dropped = []
    if min_cells_per_unit_period_group > 0:
        if size_covariate not in panel.covariates:
            raise PanelError(f"size covariate {size_covariate!r} not in panel")
        size = panel.covariates[size_covariate]
        small = panel.mask & (np.nan_to_num(size, nan=np.inf) < min_cells_per_unit_period_group)
        if small.any():
            if small_cell_policy == "cell":
                panel = panel.with_mask(~small)
            else:
                bad = [u for u, row in zip(panel.units, small) if row.any()]
                dropped.extend(bad)
                panel = panel.subset([u for u in panel.units if u not in bad])
        empty = [u for u, row in zip(panel.units, panel.mask) if not row.any()]
        if empty:
            dropped.extend(empty)
            panel = panel.subset([u for u in panel.units if u not in empty])

    short = [u for u in panel.treated_units if panel.n_pre(u) < min_pre]
    if short:
        dropped.extend(short)
        panel = panel.subset([u for u in panel.units if u not in short])
    if not panel.control_units:
        raise PanelError("no control units remain after filtering")
    return panel, panel_report(panel, dropped)


def treatment_matrix(panel: PanelDataset) -> TreatmentMatrix:
    vals = np.zeros((panel.n_units, panel.n_periods), dtype=np.int8)
    for i, u in enumerate(panel.units):
        onset = panel.treatment_onset[u]
        if onset is not None:
            vals[i] = panel.periods >= onset
    return TreatmentMatrix(panel.units, panel.periods, vals)
