"""Venue x year participation counts for organization groups."""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import pandas as pd

from .records import GroupDefinition, PaperRecord, records_by_cell

OTHER = "other"


def count_simple(records: Sequence[PaperRecord], group: GroupDefinition) -> pd.DataFrame:
    """Papers with at least one author affiliated with ``group``, per venue-year.

    A paper counts once however many of its authors match.
    """
    if not records:
        raise ValueError("no records")
    rows = [(venue, year, sum(group.matches_record(r) for r in recs))
            for (venue, year), recs in records_by_cell(records).items()]
    return pd.DataFrame(rows, columns=["venue", "year", "count"])


def paper_weights(record: PaperRecord, groups: Sequence[GroupDefinition]) -> dict:
    """Fractional credit per group for one paper, as exact fractions.

    Each author carries 1/n_authors, split evenly over that author's
    affiliations; affiliations matching no group go to ``"other"``. The
    first matching group wins when groups overlap.
    """
    out = {g.name: Fraction(0) for g in groups}
    out[OTHER] = Fraction(0)
    n_auth = len(record.authors)
    for author in record.authors:
        share = Fraction(1, n_auth * len(author.affiliations))
        for aff in author.affiliations:
            name = next((g.name for g in groups if g.match(aff) is not None), OTHER)
            out[name] += share
    return out


def count_weighted(records: Sequence[PaperRecord],
                   groups: Sequence[GroupDefinition]) -> pd.DataFrame:
    """Fractional counts per venue-year, one column per group plus ``other``."""
    names = [g.name for g in groups]
    if OTHER in names:
        raise ValueError(f"group name {OTHER!r} is reserved")
    rows = []
    for (venue, year), recs in records_by_cell(records).items():
        tot = {n: Fraction(0) for n in names + [OTHER]}
        for rec in recs:
            for n, w in paper_weights(rec, groups).items():
                tot[n] += w
        rows.append([venue, year] + [float(tot[n]) for n in names + [OTHER]])
    return pd.DataFrame(rows, columns=["venue", "year"] + names + [OTHER])


def share_series(records: Sequence[PaperRecord], group: GroupDefinition) -> pd.DataFrame:
    """Share of a venue-year's papers with at least one ``group`` author."""
    counts = count_simple(records, group)
    totals = pd.DataFrame(
        [(v, y, len(recs)) for (v, y), recs in records_by_cell(records).items()],
        columns=["venue", "year", "n_papers"])
    df = counts.merge(totals, on=["venue", "year"])
    df = df[df["n_papers"] > 0].copy()
    df["share"] = df["count"] / df["n_papers"]
    return df[["venue", "year", "count", "n_papers", "share"]].reset_index(drop=True)
