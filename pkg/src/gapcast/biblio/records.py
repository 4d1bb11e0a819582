"""Publication records and organization groups."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional


def normalize_name(name: str) -> str:
    return re.sub(r"\s+", " ", name.strip().lower())


@dataclass(frozen=True)
class Author:
    name: str
    affiliations: tuple


@dataclass(frozen=True)
class PaperRecord:
    id: str
    venue: str
    year: int
    title: str = ""
    abstract: str = ""
    authors: tuple = ()

    def __post_init__(self):
        if not self.authors:
            raise ValueError(f"record {self.id!r} has no authors")
        for a in self.authors:
            if not a.affiliations:
                raise ValueError(f"author {a.name!r} on record {self.id!r} has no affiliation")

    @classmethod
    def from_dict(cls, d: dict) -> "PaperRecord":
        authors = tuple(Author(a.get("name", ""), tuple(a.get("affiliations", ())))
                        for a in d.get("authors", ()))
        return cls(id=str(d["id"]), venue=str(d["venue"]), year=int(d["year"]),
                   title=d.get("title") or "", abstract=d.get("abstract") or "",
                   authors=authors)

    def to_dict(self) -> dict:
        return {"id": self.id, "venue": self.venue, "year": self.year,
                "title": self.title, "abstract": self.abstract,
                "authors": [{"name": a.name, "affiliations": list(a.affiliations)}
                            for a in self.authors]}


@dataclass
class GroupDefinition:
    """Named set of canonical organizations plus alias spellings.

    Matching is exact after lowercasing and whitespace trimming.
    """

    name: str
    members: set
    aliases: dict = field(default_factory=dict)

    def __post_init__(self):
        self.members = set(self.members)
        canon = [normalize_name(m) for m in self.members]
        if len(set(canon)) != len(canon):
            raise ValueError(f"group {self.name!r} has duplicate canonical names")
        stray = [a for a, c in self.aliases.items() if c not in self.members]
        if stray:
            raise ValueError(f"group {self.name!r}: aliases map outside members: {stray}")
        self._lookup = {normalize_name(m): m for m in self.members}
        self._lookup.update({normalize_name(a): c for a, c in self.aliases.items()})

    def match(self, affiliation: str) -> Optional[str]:
        """Canonical member for ``affiliation``, or None."""
        return self._lookup.get(normalize_name(affiliation))

    def matches_record(self, record: PaperRecord) -> bool:
        return any(self.match(aff) is not None
                   for a in record.authors for aff in a.affiliations)

    @classmethod
    def from_dict(cls, d: dict) -> "GroupDefinition":
        return cls(name=d["name"], members=set(d["members"]), aliases=dict(d.get("aliases", {})))


def load_records(source) -> list:
    """Read JSON-lines records from a path or text stream."""
    if isinstance(source, str) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()
    out = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(PaperRecord.from_dict(json.loads(line)))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValueError(f"bad record on line {n}: {exc}") from None
    return out


def load_groups(source) -> list:
    """Read one group object or a list of them from JSON."""
    if isinstance(source, str) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as fh:
            data = json.load(fh)
    else:
        data = json.load(source)
    if isinstance(data, dict):
        data = [data]
    return [GroupDefinition.from_dict(d) for d in data]


def records_by_cell(records: Iterable[PaperRecord]) -> dict:
    cells: dict = {}
    for rec in records:
        cells.setdefault((rec.venue, rec.year), []).append(rec)
    return dict(sorted(cells.items()))
