import math

import pytest
from hypothesis import given, settings, strategies as st

from gapcast.biblio import (Author, GroupDefinition, KeywordMatcher, PaperRecord,
                            default_keywords, filter_deep_learning, group_profile,
                            inverse_document_frequency, period_profiles, preprocess_text,
                            tfidf_group_scores)
from gapcast.biblio.text import document_tfidf


def rec(pid, abstract="", title="", affs=("MIT",), year=2015, venue="ICML"):
    return PaperRecord(pid, venue, year, title, abstract, (Author("a", tuple(affs)),))


def test_preprocess_example():
    assert preprocess_text("Deep learning of deep networks") == [
        "deep", "learn", "deep", "network", "deep_learn", "learn_deep", "deep_network"]


def test_preprocess_empty_and_stopwords():
    assert preprocess_text("") == []
    assert preprocess_text("the of and") == []
    assert preprocess_text("The, OF; and!") == []


def test_short_keyword_token_boundary():
    m = KeywordMatcher(["GAN"])
    assert not m.matches("we study organ transplantation")
    assert m.matches("a conditional GAN for images")
    assert m.matches("gan-based synthesis")


def test_default_keywords_keep_convnets():
    assert len(default_keywords()) > 10
    kept = filter_deep_learning([rec("a", "a convolutional neural network for speech"),
                                 rec("b", "we study organ transplantation"),
                                 rec("c")])
    assert [r.id for r in kept] == ["a"]


def test_title_searched_too():
    kept = filter_deep_learning([rec("a", title="Deep Learning at scale")], ["deep learning"])
    assert len(kept) == 1


def test_empty_keyword_list():
    with pytest.raises(ValueError):
        KeywordMatcher(["", "  "])


def test_two_document_tfidf():
    docs = [["deep", "learning", "deep"], ["learning", "graph"]]
    idf = inverse_document_frequency(docs)
    assert idf["deep"] == math.log(2)
    assert idf["learning"] == 0.0
    assert document_tfidf(docs[0], idf)["deep"] == pytest.approx(0.46209812037329684, abs=1e-15)


def test_single_document_profile():
    doc = ["a", "b", "b", "c"]
    idf = {"a": 1.0, "b": 2.0, "c": 0.5}
    prof = group_profile("g", [doc], idf)
    raw = {"a": 0.25, "b": 1.0, "c": 0.125}
    total = sum(raw.values())
    assert prof.scores == pytest.approx({k: v / total for k, v in raw.items()}, abs=1e-15)


def test_group_scores_and_universal_term():
    g1 = GroupDefinition("firms", {"Google"})
    g2 = GroupDefinition("unis", {"MIT"})
    recs = [rec("1", "neural model vision", affs=("Google",)),
            rec("2", "neural graph theory", affs=("MIT",)),
            rec("3", "neural vision graph", affs=("Google", "MIT"))]
    profiles = tfidf_group_scores(recs, [g1, g2])
    assert [p.group for p in profiles] == ["firms", "unis"]
    assert profiles[0].n_documents == 2 and profiles[1].n_documents == 2
    for p in profiles:
        assert p.scores["neural"] == 0.0
        assert abs(sum(p.scores.values()) - 1.0) < 1e-12
        assert min(p.scores.values()) >= 0


def test_empty_group_named():
    recs = [rec("1", "neural model", affs=("Google",)), rec("2", "graph", affs=("MIT",))]
    with pytest.raises(ValueError, match="HBCU"):
        tfidf_group_scores(recs, [GroupDefinition("HBCU", {"Howard"})])


def test_period_profiles_split():
    recs = [rec("1", "svm kernel margin", year=2010), rec("2", "deep network", year=2014)]
    before, after = period_profiles(recs, 2012)
    assert before.group == "before_2012" and "kernel" in before.scores
    assert "network" in after.scores and "kernel" not in after.scores


# -- properties -------------------------------------------------------------

words = st.sampled_from(["deep", "graph", "kernel", "vision", "speech", "model", "robot"])
docs_st = st.lists(st.lists(words, min_size=1, max_size=8), min_size=2, max_size=6)


@given(docs_st)
@settings(max_examples=100, deadline=None)
def test_profile_sums_to_one_and_duplicates_invariant(docs):
    idf = inverse_document_frequency(docs)
    if all(v == 0 for v in idf.values()):
        return
    try:
        prof = group_profile("g", docs, idf)
    except ValueError:
        return
    assert abs(sum(prof.scores.values()) - 1.0) < 1e-12
    doubled = group_profile("g", docs + docs, idf)
    for k, v in prof.scores.items():
        assert doubled.scores[k] == pytest.approx(v, abs=1e-12)


@given(st.lists(st.text(alphabet="abcdegilnorstu -", max_size=40), min_size=1, max_size=8),
       st.lists(st.sampled_from(["gan", "learning", "network", "rnn", "organ", "deep"]),
                min_size=1, max_size=4),
       st.lists(st.sampled_from(["lstm", "neural", "train"]), max_size=3))
@settings(max_examples=150, deadline=None)
def test_keyword_monotone(abstracts, base, extra):
    recs = [rec(str(i), a) for i, a in enumerate(abstracts)]
    small = {r.id for r in filter_deep_learning(recs, base)}
    large = {r.id for r in filter_deep_learning(recs, base + extra)}
    assert small <= large
