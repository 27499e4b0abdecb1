import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from universe_match.metrics import (MatchTypeCounts, accuracy, clustering_accuracy, clustering_metrics,
                                    clustering_purity, confusion, f1, match_types, rand_index, within_cluster_mean)
from universe_match.multigraph import ClusterResult

from metric_fixtures import (ACCURACY_CASES, CLUSTER_CASES, F1_CASES, MATCH_TYPE_CASES, MI, O, UI,
                             pair_scores)


@pytest.mark.parametrize("name, pred, gt, expected", F1_CASES, ids=[c[0] for c in F1_CASES])
def test_f1_fixtures(name, pred, gt, expected):
    np.testing.assert_allclose(f1(pred, gt), expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize("name, pred, gt, expected", ACCURACY_CASES, ids=[c[0] for c in ACCURACY_CASES])
def test_accuracy_fixtures(name, pred, gt, expected):
    assert accuracy(pred, gt) == pytest.approx(expected, abs=1e-12)


def test_accuracy_gt_normalization():
    pred = np.array([[1, 0], [0, 1]])
    gt = np.array([[1, 0], [0, 0]])
    assert accuracy(pred, gt, normalize="gt") == 0.0
    assert accuracy(pred, gt) == 0.5
    with pytest.raises(ValueError):
        accuracy(pred, gt, normalize="other")


@pytest.mark.parametrize("name, pred, ta, tb, gt, expected", MATCH_TYPE_CASES,
                         ids=[c[0] for c in MATCH_TYPE_CASES])
def test_match_type_fixtures(name, pred, ta, tb, gt, expected):
    c = match_types(pred, ta, tb, gt)
    assert (c.correct, c.mismatching, c.ill_matching, c.over_matching) == expected
    assert c.total == pred.sum()


@pytest.mark.parametrize("case", CLUSTER_CASES, ids=[c[0] for c in CLUSTER_CASES])
def test_cluster_fixtures(case):
    name, labels, gt, cp, ri, ca, f1c, f1c_written = case
    scores = pair_scores(len(labels))
    got = clustering_metrics(ClusterResult(np.array(labels), len(set(labels)), scores), gt, scores, scores)
    assert got.cp == pytest.approx(float(cp), abs=1e-12)
    assert got.ri == pytest.approx(float(ri), abs=1e-12)
    assert got.ca == pytest.approx(float(ca), abs=1e-12)
    assert got.f1c == pytest.approx(float(f1c), abs=1e-12)
    assert got.mac == got.f1c
    assert within_cluster_mean(labels, scores, as_written=True) == pytest.approx(float(f1c_written), abs=1e-12)


def test_confusion_shape_check():
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2)), np.zeros((2, 3)))


def _matching(rng, n, m):
    x = np.zeros((n, m), dtype=np.int8)
    k = int(rng.integers(0, min(n, m) + 1))
    x[rng.choice(n, k, replace=False), rng.choice(m, k, replace=False)] = 1
    return x


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_f1_symmetric(n, m, seed):
    rng = np.random.default_rng(seed)
    p, g = _matching(rng, n, m), _matching(rng, n, m)
    assert f1(p, g)[0] == pytest.approx(f1(g, p)[0], abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_match_types_sum(n, seed):
    rng = np.random.default_rng(seed)
    p, g = _matching(rng, n, n), _matching(rng, n, n)
    kinds = [MI, UI]
    ta = [kinds[i] for i in rng.integers(0, 2, n)]
    tb = [kinds[i] for i in rng.integers(0, 2, n)]
    c = match_types(p, ta, tb, g)
    assert c.total == p.sum()
    assert c.over_matching == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=12), st.integers(0, 2**32 - 1))
def test_cluster_ranges_and_relabeling(labels, seed):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 3, len(labels))
    labels = np.array(labels)
    cp, ri = clustering_purity(labels, gt), rand_index(labels, gt)
    assert 0 <= cp <= 1 and 0 <= ri <= 1
    relabel = rng.permutation(10)[labels]
    assert rand_index(relabel, gt) == ri
    assert clustering_accuracy(relabel, gt) == pytest.approx(clustering_accuracy(labels, gt), abs=1e-12)


def test_f1c_single_cluster_is_mean():
    rng = np.random.default_rng(0)
    s = rng.uniform(size=(5, 5))
    s = s + s.T
    iu = np.triu_indices(5, 1)
    assert within_cluster_mean([0] * 5, s) == pytest.approx(s[iu].mean(), abs=1e-15)


def test_ratios():
    c = MatchTypeCounts(correct=3, over_matching=1)
    assert c.ratios() == {"correct": 0.75, "mismatching": 0.0, "ill_matching": 0.0, "over_matching": 0.25}
    c += MatchTypeCounts(mismatching=4)
    assert c.total == 8
    assert MatchTypeCounts().ratios()["correct"] == 0.0
