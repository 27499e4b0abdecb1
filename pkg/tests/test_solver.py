import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from universe_match.affinity import UniverseAffinity
from universe_match.core import OUTLIER
from universe_match.solver import (UniverseAssignment, brute_force_assignment, counters, hungarian, infer_universe,
                                   outlier_filter, reconstruct_pairwise)

from _util import aff, one_hot


def _pairs(x):
    return tuple(zip(*[a.tolist() for a in np.nonzero(x)]))


def test_hungarian_2x2():
    assert _pairs(hungarian([[1, 0], [0, 1]])) == ((0, 0), (1, 1))
    assert _pairs(hungarian([[0, 1], [1, 0]])) == ((0, 1), (1, 0))
    assert _pairs(hungarian([[0, 1], [1, 0]], maximize=False)) == ((0, 0), (1, 1))


def test_hungarian_4x6_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = rng.normal(size=(4, 6))
        best, _ = brute_force_assignment(s)
        x = hungarian(s)
        assert x.sum() == 4
        assert float((x * s).sum()) == pytest.approx(best, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6), st.booleans(), st.booleans(), st.integers(0, 2**32 - 1))
def test_hungarian_is_lexmin_optimum(n, m, maximize, ties, seed):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 3, size=(n, m)).astype(float) if ties else rng.normal(size=(n, m))
    x = hungarian(s, maximize=maximize)
    assert x.shape == (n, m)
    assert x.sum() == min(n, m)
    assert (x.sum(axis=1) <= 1).all() and (x.sum(axis=0) <= 1).all()
    best, optima = brute_force_assignment(s, maximize)
    assert float((x * s).sum()) == pytest.approx(best, abs=1e-9)
    assert _pairs(x) == min(optima)


def test_hungarian_rejects_non_finite():
    with pytest.raises(ValueError):
        hungarian([[np.nan, 0.0]])
    with pytest.raises(ValueError):
        hungarian(np.zeros(3))


def test_hungarian_counts_calls():
    before = counters["hungarian"]
    hungarian(np.eye(2))
    hungarian(np.zeros((0, 2)))
    assert counters["hungarian"] == before + 2


def test_outlier_filter_examples():
    kept, sp = outlier_filter(aff(one_hot(4, [3, 3])))
    assert kept.size == 0 and sp.shape == (0, 3)
    kept, sp = outlier_filter(aff(one_hot(4, [0, 2, 1])))
    assert kept.tolist() == [0, 1, 2] and sp.shape == (3, 3)


def test_outlier_filter_scan_oracle():
    rng = np.random.default_rng(1)
    s = UniverseAffinity.from_raw(rng.normal(scale=2, size=(40, 5)))
    dropped = [i for i in range(40) if all(s.prob[i, 4] > s.prob[i, k] for k in range(4))]
    kept, sp = outlier_filter(s)
    assert sorted(set(range(40)) - set(kept.tolist())) == dropped
    np.testing.assert_array_equal(sp, s.prob[kept, :4])


def test_outlier_filter_tie_keeps_row():
    kept, _ = outlier_filter(aff([[0.5, 0.0, 0.5]]))
    assert kept.tolist() == [0]


def test_infer_universe_examples():
    a = infer_universe(aff(0.9 * one_hot(5, [0, 1, 2, 3]) + 0.025))
    assert a.assign.tolist() == [0, 1, 2, 3]
    a = infer_universe(aff(one_hot(4, [3, 3, 3])))
    assert a.assign.tolist() == [OUTLIER] * 3


def test_infer_universe_leftover_rows_are_outliers():
    rng = np.random.default_rng(2)
    p = rng.dirichlet(np.ones(4), size=7)
    p[:, -1] = 0
    p /= p.sum(axis=1, keepdims=True)
    a = infer_universe(aff(p))
    assert np.sum(a.assign != OUTLIER) == 3
    assert np.sum(a.assign == OUTLIER) == 4


def test_infer_universe_permutation_equivariant():
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = UniverseAffinity.from_raw(rng.normal(size=(6, 5)))
        perm = rng.permutation(6)
        base = infer_universe(s).assign
        permuted = infer_universe(UniverseAffinity.from_raw(s.raw[perm])).assign
        np.testing.assert_array_equal(permuted, base[perm])


def test_assignment_validation():
    with pytest.raises(ValueError):
        UniverseAssignment("g", [0, 0], 3)
    with pytest.raises(ValueError):
        UniverseAssignment("g", [2], 3)
    a = UniverseAssignment("g", [1, OUTLIER], 3)
    np.testing.assert_array_equal(a.filled(), [[0, 1], [0, 0]])


def test_reconstruct_pairwise_examples():
    a = UniverseAssignment("a", [2, OUTLIER, 0], 4)
    np.testing.assert_array_equal(reconstruct_pairwise(a, a), np.diag([1, 0, 1]))
    b = UniverseAssignment("b", [1, OUTLIER], 4)
    assert not reconstruct_pairwise(a, b).any()


def _random_assignment(rng, n, n_u):
    k = int(rng.integers(0, min(n, n_u - 1) + 1))
    assign = np.full(n, OUTLIER)
    assign[rng.choice(n, k, replace=False)] = rng.choice(n_u - 1, k, replace=False)
    return UniverseAssignment("g", assign, n_u)


def test_reconstruct_pairwise_matmul_and_cycles():
    rng = np.random.default_rng(4)
    for _ in range(200):
        xs = [_random_assignment(rng, int(rng.integers(1, 7)), 6) for _ in range(3)]
        x01 = reconstruct_pairwise(xs[0], xs[1])
        np.testing.assert_array_equal(x01, xs[0].filled().astype(int) @ xs[1].filled().T)
        x12 = reconstruct_pairwise(xs[1], xs[2])
        x02 = reconstruct_pairwise(xs[0], xs[2])
        assert np.all(x01.astype(int) @ x12 <= x02)
