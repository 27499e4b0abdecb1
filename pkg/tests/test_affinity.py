import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from universe_match.affinity import (UniverseAffinity, UniverseMetric, build_ku, forward, pairwise_affinity,
                                     qap_score, softmax_rows)
from universe_match.core import UniverseSpec
from universe_match.gradcheck import metric_gradcheck

from _util import aff, one_hot


def _linear(weight):
    d = weight.shape[0]
    return UniverseMetric(weight=np.asarray(weight, float), gamma=np.ones(d), beta=np.zeros(d),
                          running_mean=np.zeros(d), running_var=np.ones(d), nonlinear=False)


def test_identity_map_argmax():
    m = _linear(np.eye(5))
    out = forward(m, np.eye(5))
    assert np.argmax(out.prob, axis=1).tolist() == list(range(5))


def test_zero_features_uniform():
    m = _linear(np.random.default_rng(0).normal(size=(4, 6)))
    out = forward(m, np.zeros((3, 4)))
    np.testing.assert_allclose(out.prob, 1 / 6, rtol=0, atol=1e-15)


def test_raw_is_matmul():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(8, 5))
    f = rng.normal(size=(4, 8))
    m = _linear(w)
    raw = forward(m, f).raw
    ref = np.array([[sum(f[i, k] * w[k, j] for k in range(8)) for j in range(5)] for i in range(4)])
    np.testing.assert_allclose(raw, ref, rtol=0, atol=1e-12)


def test_init_state():
    m = UniverseMetric.init(6, UniverseSpec(4), seed=0)
    assert m.weight.shape == (6, 4)
    assert np.all(m.running_var > 0) and np.all(np.isfinite(m.weight))
    assert abs(m.weight.std() - 1 / np.sqrt(6)) < 0.25
    assert UniverseMetric.init(6, 4, seed=0).weight.tolist() == m.weight.tolist()
    with pytest.raises(ValueError):
        UniverseMetric.init(6, 4, tau=0)


def test_forward_rejects_bad_input():
    m = UniverseMetric.init(3, 4)
    with pytest.raises(ValueError):
        forward(m, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        forward(m, np.array([[np.inf, 0, 0]]))


def test_batch_norm_modes():
    rng = np.random.default_rng(2)
    m = UniverseMetric.init(3, 4, seed=0)
    f = rng.normal(2.0, 3.0, size=(50, 3))
    forward(m, f, training=True)
    np.testing.assert_allclose(m.running_mean, 0.1 * f.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(m.running_var, 0.9 + 0.1 * f.var(axis=0), rtol=1e-12)
    before = m.running_mean.copy()
    forward(m, f)
    assert np.array_equal(before, m.running_mean)
    # in training mode the batch statistics are used
    _, cache = forward(m.copy(), f, training=True, return_cache=True)
    np.testing.assert_allclose(cache.xhat.mean(axis=0), 0, atol=1e-12)


def test_forward_counter():
    m = UniverseMetric.init(3, 4)
    forward(m, np.zeros((1, 3)))
    forward(m, np.zeros((2, 3)), training=True)
    assert m.forward_calls == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 9), st.floats(0.1, 5.0), st.integers(0, 2**32 - 1))
def test_softmax_rows(n, n_u, tau, seed):
    raw = np.random.default_rng(seed).normal(scale=10, size=(n, n_u))
    a = UniverseAffinity.from_raw(raw, tau)
    np.testing.assert_allclose(a.prob.sum(axis=1), 1, atol=1e-9)
    assert np.all(a.prob >= 0)
    if tau == 1.0:
        e = np.exp(raw - raw.max(axis=1, keepdims=True))
        np.testing.assert_allclose(a.prob, e / e.sum(axis=1, keepdims=True), rtol=1e-12)


def test_softmax_plain():
    z = np.array([[0.0, np.log(3.0)]])
    np.testing.assert_allclose(softmax_rows(z), [[0.25, 0.75]], rtol=1e-15)


def test_pairwise_affinity_examples():
    a = aff(one_hot(4, [2, 0, 1]))
    b = aff(one_hot(4, [0, 1, 2]))
    np.testing.assert_array_equal(pairwise_affinity(a, b), [[0, 0, 1], [1, 0, 0], [0, 1, 0]])
    u = aff(np.full((3, 3), 1 / 3))
    np.testing.assert_allclose(pairwise_affinity(u, u), 1 / 3, rtol=1e-15)


def test_pairwise_affinity_triple_loop():
    rng = np.random.default_rng(3)
    a = UniverseAffinity.from_raw(rng.normal(size=(4, 6)))
    b = UniverseAffinity.from_raw(rng.normal(size=(5, 6)))
    ref = np.array([[sum(a.prob[i, k] * b.prob[j, k] for k in range(6)) for j in range(5)] for i in range(4)])
    np.testing.assert_allclose(pairwise_affinity(a, b), ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(pairwise_affinity(a, b, use_raw=True), a.raw @ b.raw.T, rtol=1e-12)
    with pytest.raises(ValueError):
        pairwise_affinity(a, UniverseAffinity.from_raw(np.zeros((2, 5))))


def test_reconstruction_identity_shared_metric():
    # S_ab from two forwards equals one forward of the stacked features, split afterwards
    rng = np.random.default_rng(4)
    m = UniverseMetric.init(5, 7, seed=1)
    fa, fb = rng.normal(size=(3, 5)), rng.normal(size=(4, 5))
    both = forward(m, np.vstack([fa, fb]))
    direct = pairwise_affinity(forward(m, fa), forward(m, fb))
    np.testing.assert_allclose(direct, both.prob[:3] @ both.prob[3:].T, rtol=0, atol=1e-9)


def test_build_ku_examples():
    assert not build_ku(np.zeros((2, 3))).any()
    np.testing.assert_array_equal(build_ku([[3.0]]), [[9.0]])
    with pytest.raises(ValueError):
        build_ku([[-1.0]])


def test_build_ku_permutations():
    import itertools

    s = np.random.default_rng(5).uniform(size=(3, 3))
    k = build_ku(s)
    for perm in itertools.permutations(range(3)):
        x = np.zeros((3, 3))
        x[range(3), perm] = 1
        assert qap_score(k, x) == pytest.approx(sum(s[i, perm[i]] for i in range(3)) ** 2, rel=1e-12)


def test_qap_score_examples():
    assert qap_score(np.zeros((4, 4)), np.eye(2)) == 0
    assert qap_score(np.eye(4), np.eye(2)) == 2


def test_qap_score_double_loop():
    rng = np.random.default_rng(6)
    k = rng.normal(size=(12, 12))
    x = np.zeros((3, 4), dtype=int)
    x[[0, 2], [3, 1]] = 1
    idx = [i + 3 * j for i, j in zip(*np.nonzero(x))]  # column-major position of (i, j)
    ref = sum(k[p, q] for p in idx for q in idx)
    assert qap_score(k, x) == pytest.approx(ref, rel=1e-12)
    with pytest.raises(ValueError):
        qap_score(np.eye(5), x)


@pytest.mark.parametrize("nonlinear", [True, False])
def test_backward_matches_finite_differences(nonlinear):
    rng = np.random.default_rng(7)
    m = UniverseMetric.init(5, 6, nonlinear=nonlinear, seed=2, tau=0.7)
    m.running_mean[:] = rng.normal(scale=0.1, size=5)
    m.beta[:] = 0.2
    gt = np.zeros((3, 4), dtype=np.int8)
    gt[0, 1] = gt[2, 3] = 1
    errs = metric_gradcheck(m, rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), gt)
    assert set(errs) == ({"weight", "gamma", "beta"} if nonlinear else {"weight"})
    assert max(errs.values()) < 1e-6
