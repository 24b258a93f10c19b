import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import jensenshannon
from scipy.special import rel_entr
from scipy.stats import entropy as scipy_entropy

from deeper.evalkit import (
    DegenerateRangeWarning,
    HistogramDist,
    JudgeError,
    MetricReport,
    accuracy,
    component_histogram,
    jensen_shannon_distance,
    judge_open_ended,
    nugget_coverage,
    set_similarity,
    shannon_entropy,
    shared_histograms,
    source_coverage,
    write_embeddings_csv,
    write_metrics,
    write_year_csv,
    year_distribution,
)
from deeper.litclients import EvidenceItem
from deeper.llm import UnavailableProvider
from helpers import FnProvider, user_text

# frozen from the hand computation: M=(.75,.25), KL(P||M)=.2075187..., KL(Q||M)=.4150375...
HAND_JSD = 0.5579230453


def test_accuracy():
    assert accuracy(396, 500) == 0.792
    assert f"{accuracy(396, 500):.1%}" == "79.2%"
    assert accuracy(5, 5) == 1.0 and accuracy(0, 10) == 0.0
    with pytest.raises(ValueError):
        accuracy(0, 0)
    with pytest.raises(ValueError):
        accuracy(6, 5)


def test_constant_vector_is_degenerate():
    with pytest.warns(DegenerateRangeWarning):
        d = component_histogram([0.5] * 768)
    assert (d.counts > 0).sum() == 1
    assert shannon_entropy(d) < 1e-6


def test_uniform_counts_give_uniform_distribution():
    k = 100
    x = np.repeat(np.arange(k) + 0.5, 7)
    d = component_histogram(x, k, (0.0, float(k)))
    assert np.allclose(d.probs, 1 / k)
    assert abs(shannon_entropy(d) - math.log2(100)) < 1e-9


def test_permutation_invariance():
    rng = np.random.default_rng(0)
    vecs = rng.normal(size=(5, 768))
    d1 = component_histogram(vecs)
    d2 = component_histogram(vecs[::-1][:, rng.permutation(768)])
    assert np.array_equal(d1.probs, d2.probs) and np.array_equal(d1.edges, d2.edges)


def test_fixed_range_clips():
    d = component_histogram([-5.0, 0.1, 0.9, 5.0], 2, (0.0, 1.0))
    assert list(d.counts) == [2, 2]


def test_bad_inputs():
    with pytest.raises(ValueError):
        component_histogram([[1.0, 2.0], [1.0]])
    with pytest.raises(ValueError):
        component_histogram([1.0, float("nan")])
    with pytest.raises(ValueError):
        component_histogram([1.0, 2.0], k=1)


def test_entropy_examples():
    assert abs(shannon_entropy(HistogramDist.from_probabilities([0.5, 0.5])) - 1.0) < 1e-12
    assert shannon_entropy(HistogramDist.from_probabilities([1.0] + [0.0] * 99)) < 1e-6


def test_jsd_examples():
    p = HistogramDist.from_probabilities([0.5, 0.5])
    q = HistogramDist.from_probabilities([1.0, 0.0])
    assert abs(jensen_shannon_distance(p, q) - HAND_JSD) < 1e-6
    assert abs(jensenshannon([0.5, 0.5], [1.0, 0.0], base=2) - HAND_JSD) < 1e-9
    assert jensen_shannon_distance(p, p) < 1e-9
    disjoint = jensen_shannon_distance(HistogramDist.from_probabilities([1, 0]), HistogramDist.from_probabilities([0, 1]))
    assert abs(disjoint - 1.0) < 1e-6


def test_jsd_requires_shared_edges():
    with pytest.raises(ValueError):
        jensen_shannon_distance(HistogramDist.from_probabilities([1, 1]), HistogramDist.from_probabilities([1, 1, 1]))
    a = component_histogram([0.0, 1.0], 2)
    b = component_histogram([0.0, 2.0], 2)
    with pytest.raises(ValueError):
        jensen_shannon_distance(a, b)


def test_shared_histograms_use_common_edges():
    rng = np.random.default_rng(1)
    p, q = shared_histograms(rng.normal(size=(3, 64)), rng.normal(1, 1, size=(4, 64)))
    assert np.array_equal(p.edges, q.edges)
    assert 0 < jensen_shannon_distance(p, q) < 1


probs = st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=120).filter(lambda v: sum(v) > 1e-6)


@settings(max_examples=200)
@given(probs)
def test_entropy_matches_scipy_and_is_bounded(v):
    d = HistogramDist.from_probabilities(v)
    h = shannon_entropy(d)
    assert -1e-12 <= h <= math.log2(d.k) + 1e-9
    assert abs(h - scipy_entropy(d.probs, base=2)) < 1e-9


@settings(max_examples=200)
@given(st.integers(2, 60).flatmap(lambda k: st.tuples(*[st.lists(st.floats(0, 1), min_size=k, max_size=k).filter(lambda v: sum(v) > 1e-6)] * 2)))
def test_jsd_matches_scipy_symmetric_bounded(pair):
    p, q = (HistogramDist.from_probabilities(v) for v in pair)
    d = jensen_shannon_distance(p, q)
    assert 0 <= d <= 1 + 1e-12
    assert abs(d - jensen_shannon_distance(q, p)) < 1e-12
    m = (p.probs + q.probs) / 2
    oracle = math.sqrt(max(0.0, (rel_entr(p.probs, m).sum() + rel_entr(q.probs, m).sum()) / 2 / math.log(2)))
    assert abs(d - oracle) < 1e-9


# -- similarity and coverage ----------------------------------------------------


class VecEmbedder:
    name = "vec"
    dimension = 4
    live = False

    def __init__(self, table):
        self.table = table

    def embed(self, text):
        return self.table[text.split("\n")[0]]


def items(*titles):
    return [EvidenceItem("pubmed-abstract", str(n + 1), t, "") for n, t in enumerate(titles)]


def test_set_similarity():
    emb = VecEmbedder({"a": [1, 0, 0, 0], "b": [1, 1, 0, 0], "c": [0, 0, 1, 0], "d": [0.5, 0.5, 0, 0]})
    assert abs(set_similarity(items("a", "b"), items("a", "b"), emb) - 1.0) < 1e-9
    assert abs(set_similarity(items("a"), items("c"), emb)) < 1e-12
    assert abs(set_similarity(items("a"), items("d"), emb) - math.sqrt(2) / 2) < 1e-12
    with pytest.raises(ValueError):
        set_similarity([], items("a"), emb)


def test_source_coverage():
    assert source_coverage({"A", "B", "C", "D"}, {"A", "B", "C"}) == 1.0
    assert source_coverage({"A"}, {"A", "B"}) == 0.5
    assert source_coverage(set(), {"A"}) == 0.0
    with pytest.raises(ValueError):
        source_coverage({"A"}, set())


@given(st.sets(st.sampled_from("ABCDEFG")), st.sets(st.sampled_from("ABCDEFG"), min_size=1), st.sets(st.sampled_from("ABCDEFG")))
def test_coverage_monotone(cited, truth, extra):
    assert source_coverage(truth, truth) == 1.0
    assert source_coverage(cited | extra, truth) >= source_coverage(cited, truth)


# -- judges ---------------------------------------------------------------------


def test_nuggets_three_of_five():
    matched = {"n1", "n3", "n5"}
    judge = FnProvider(judge=lambda r: {"verdict": "matched" if any(f"Nugget: {n}\n" in user_text(r) for n in matched) else "unmatched"})
    r = nugget_coverage("some answer", ["n1", "n2", "n3", "n4", "n5"], judge)
    assert r.as_tuple() == (3, 5) and r.undecided == ()


def test_nuggets_empty_answer_and_judge_down():
    judge = FnProvider()
    assert nugget_coverage("  ", ["a", "b"], judge).as_tuple() == (0, 2)
    assert judge.calls == []
    r = nugget_coverage("answer", list("abcde"), UnavailableProvider())
    assert r.as_tuple() == (0, 5) and len(r.undecided) == 5


def test_open_ended_judge():
    consistent = FnProvider(judge=lambda r: {"verdict": "consistent"})
    assert judge_open_ended("same", "same", consistent) == "consistent"
    assert judge_open_ended("a", "b", FnProvider(judge=lambda r: {"verdict": "inconsistent"})) == "inconsistent"
    garbage = FnProvider(judge=lambda r: "maybe?")
    with pytest.raises(JudgeError):
        judge_open_ended("a", "b", garbage)
    assert len(garbage.calls) == 2


# -- years and reports -----------------------------------------------------------


def test_year_distribution():
    d = year_distribution([2010, 2022, 2024, 2024], current_year=2025)
    assert d.recent_share == 0.75 and d.counts == {2010: 1, 2022: 1, 2024: 2}
    empty = year_distribution([None, None], 2025)
    assert empty.counts == {} and not empty.defined and empty.unknown == 2
    assert year_distribution([2025], 2025).recent_share == 1.0
    assert year_distribution([2021, 2020], 2025).recent_share == 0.5


def test_report_writers(tmp_path):
    path = write_metrics([MetricReport("accuracy", 0.792, "abc", {"correct": 396, "total": 500})], tmp_path / "metrics.json")
    assert json.loads(path.read_text())["metrics"][0]["value"] == 0.792
    write_year_csv(year_distribution([2020, None], 2025), tmp_path / "y.csv")
    assert list(csv.reader(open(tmp_path / "y.csv"))) == [["year", "count"], ["2020", "1"], ["unknown", "1"]]
    write_embeddings_csv(["a"], np.array([[0.5, 1.0]]), tmp_path / "e.csv")
    assert list(csv.reader(open(tmp_path / "e.csv")))[1] == ["a", "0.5", "1.0"]
