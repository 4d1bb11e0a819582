"""Keyword subsetting, abstract preprocessing, and normalized TF-IDF profiles."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

from nltk.stem import PorterStemmer

from .records import GroupDefinition, PaperRecord

SHORT_KEYWORD = 5
_NON_ALNUM = re.compile(r"[^a-z0-9]+")


def _data_lines(name: str) -> list:
    text = resources.files("gapcast.biblio").joinpath("data", name).read_text("utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip()]


@lru_cache(maxsize=None)
def default_keywords() -> tuple:
    """Bundled deep-learning keyword phrases."""
    return tuple(_data_lines("dl_keywords.txt"))


@lru_cache(maxsize=None)
def stopwords() -> frozenset:
    return frozenset(_data_lines("stopwords.txt"))


def load_keywords(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip()]


def _flatten(text: str) -> str:
    return " " + _NON_ALNUM.sub(" ", text.lower()).strip() + " "


class KeywordMatcher:
    """Case-insensitive phrase matching over title and abstract.

    Punctuation is treated as whitespace. Phrases shorter than five
    characters must match whole tokens (``GAN`` does not hit ``organ``).
    """

    def __init__(self, keywords: Iterable[str]):
        self.keywords = [k for k in keywords if k.strip()]
        if not self.keywords:
            raise ValueError("keyword list is empty")
        self._short = [_flatten(k) for k in self.keywords if len(k.strip()) < SHORT_KEYWORD]
        self._long = [_flatten(k).strip() for k in self.keywords
                      if len(k.strip()) >= SHORT_KEYWORD]

    def matches(self, text: str) -> bool:
        flat = _flatten(text)
        return (any(k in flat for k in self._short)
                or any(k in flat for k in self._long))


def filter_deep_learning(records: Sequence[PaperRecord],
                         keywords: Optional[Iterable[str]] = None) -> list:
    matcher = KeywordMatcher(default_keywords() if keywords is None else keywords)
    return [r for r in records if matcher.matches(r.title + " \n " + r.abstract)]


_stemmer = PorterStemmer()


@lru_cache(maxsize=65536)
def _stem(token: str) -> str:
    return _stemmer.stem(token)


def preprocess_text(document: str) -> list:
    """Lowercase, tokenize, drop stopwords, Porter-stem; unigrams then bigrams.

    Bigrams join adjacent tokens that survived stopword removal.
    """
    stop = stopwords()
    tokens = [t for t in _NON_ALNUM.split(document.lower()) if t and t not in stop]
    stems = [_stem(t) for t in tokens]
    return stems + [f"{a}_{b}" for a, b in zip(stems, stems[1:])]


@dataclass
class TfidfProfile:
    group: str
    scores: dict            # term -> normalized score, sums to 1
    n_documents: int = 0
    venue: Optional[str] = None


def inverse_document_frequency(docs: Sequence[Sequence[str]]) -> dict:
    """Natural-log IDF, unsmoothed: log(N / df)."""
    n = len(docs)
    df = Counter()
    for doc in docs:
        df.update(set(doc))
    return {w: math.log(n / c) for w, c in df.items()}


def document_tfidf(doc: Sequence[str], idf: Mapping[str, float]) -> dict:
    if not doc:
        return {}
    counts = Counter(doc)
    total = len(doc)
    return {w: (c / total) * idf[w] for w, c in counts.items()}


def group_profile(name: str, docs: Sequence[Sequence[str]], idf: Mapping[str, float],
                  venue: Optional[str] = None) -> TfidfProfile:
    """Sum per-term TF-IDF over ``docs`` and normalize to total 1."""
    if not docs:
        raise ValueError(f"group {name!r} has no documents")
    summed: Counter = Counter()
    for doc in docs:
        for w, v in document_tfidf(doc, idf).items():
            summed[w] += v
    total = math.fsum(summed.values())
    if total <= 0:
        raise ValueError(f"group {name!r} has zero total TF-IDF (every term is in every document)")
    scores = {w: v / total for w, v in sorted(summed.items())}
    return TfidfProfile(name, scores, len(docs), venue)


def tfidf_group_scores(records: Sequence[PaperRecord], groups: Sequence[GroupDefinition],
                       venue: Optional[str] = None) -> list:
    """Normalized TF-IDF profile of abstracts per organization group.

    IDF comes from every record passed (all groups pooled). A paper joins
    every group that has at least one of its authors.
    """
    if venue is not None:
        records = [r for r in records if r.venue == venue]
    docs = [preprocess_text(r.abstract) for r in records]
    idf = inverse_document_frequency(docs)
    out = []
    for g in groups:
        member_docs = [d for d, r in zip(docs, records) if g.matches_record(r)]
        out.append(group_profile(g.name, member_docs, idf, venue))
    return out


def period_profiles(records: Sequence[PaperRecord], split_year: int = 2012,
                    venue: Optional[str] = None) -> list:
    """Profiles for papers before ``split_year`` and from it on, sharing one IDF."""
    if venue is not None:
        records = [r for r in records if r.venue == venue]
    docs = [preprocess_text(r.abstract) for r in records]
    idf = inverse_document_frequency(docs)
    before = [d for d, r in zip(docs, records) if r.year < split_year]
    after = [d for d, r in zip(docs, records) if r.year >= split_year]
    return [group_profile(f"before_{split_year}", before, idf, venue),
            group_profile(f"from_{split_year}", after, idf, venue)]
