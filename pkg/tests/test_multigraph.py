import numpy as np
import pytest

from universe_match.affinity import UniverseAffinity, UniverseMetric, pairwise_affinity
from universe_match.core import FEATURE_MERGED, NODE_MERGED, OUTLIER
from universe_match.datagen import GenConfig, derive_pairwise_gt, generate
from universe_match.metrics import clustering_purity
from universe_match.multigraph import (MatchSession, affinity_score, batch_pairwise, match_universe,
                                       mixture_pipeline, session_add, session_pairwise, spectral_cluster)

from _util import aff, one_hot, planted_metric


@pytest.fixture(scope="module")
def iset():
    return generate(GenConfig(class_count=3, anchors_per_class=[5], feature_dim=24, graphs_per_class=6,
                              inlier_drop_range=(0, 1), outlier_count_range=(0, 1), seed=3))


def test_session_single_admission(iset):
    s = MatchSession(UniverseMetric.init(24, 8, seed=0))
    session_add(s, iset.graphs[0])
    assert len(s) == 1 and s.op_log == [(1, 1)]


def test_session_fifteen_graphs_constant_cost(iset):
    s = MatchSession(UniverseMetric.init(24, 8, seed=0))
    for g in iset.graphs[:15]:
        s.add(g)
    assert s.forward_count == 15 and s.hungarian_count == 15
    assert all(ops == (1, 1) for ops in s.op_log)
    s.pairwise(0, 14)
    assert s.forward_count == 15


def test_session_matches_batch(iset):
    m = UniverseMetric.init(24, 8, seed=1)
    graphs = iset.graphs[:10]
    s = MatchSession(m)
    for g in reversed(graphs):
        s.add(g)
    batch = batch_pairwise(graphs, m)
    for i, gi in enumerate(graphs):
        for j, gj in enumerate(graphs):
            assert np.array_equal(session_pairwise(s, gi.id, gj.id), batch[i, j])


def test_session_pairwise_self_and_disjoint(iset):
    m = planted_metric(iset, NODE_MERGED)
    s = MatchSession(m)
    a, b = iset.by_class()[0][0], iset.by_class()[1][0]
    s.add(a)
    s.add(b)
    np.testing.assert_array_equal(s.pairwise(0, 0), np.diag((s.stored[0].assign != OUTLIER).astype(int)))
    assert not s.pairwise(0, 1).any()
    with pytest.raises(KeyError):
        s.pairwise("missing", 0)


def test_session_checks_dimension(iset):
    s = MatchSession(UniverseMetric.init(5, 8))
    with pytest.raises(ValueError):
        s.add(iset.graphs[0])


def test_affinity_score_examples():
    a = aff(one_hot(4, [0, 1, 2]))
    x = np.eye(3, dtype=np.int8)
    assert affinity_score(np.zeros((3, 3)), a, a) == 0
    assert affinity_score(x, a, a) == 3
    rng = np.random.default_rng(0)
    sa = UniverseAffinity.from_raw(rng.normal(size=(3, 5)))
    sb = UniverseAffinity.from_raw(rng.normal(size=(4, 5)))
    x = np.zeros((3, 4), dtype=np.int8)
    x[0, 2] = x[2, 0] = 1
    s = pairwise_affinity(sa, sb)
    assert affinity_score(x, sa, sb) == pytest.approx(s[0, 2] + s[2, 0], rel=1e-14)


def test_spectral_blocks():
    a = np.zeros((6, 6))
    a[:3, :3] = 1
    a[3:, 3:] = 1
    labels = spectral_cluster(a, 2).labels
    assert len(set(labels[:3])) == 1 and len(set(labels[3:])) == 1 and labels[0] != labels[3]
    assert clustering_purity(labels, [0, 0, 0, 1, 1, 1]) == 1.0


def test_spectral_singletons_and_one():
    rng = np.random.default_rng(1)
    a = rng.uniform(size=(5, 5))
    a = a + a.T
    assert sorted(spectral_cluster(a, 5).labels.tolist()) == [0, 1, 2, 3, 4]
    assert spectral_cluster(a, 1).labels.tolist() == [0] * 5


def test_spectral_relabel_invariance():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 0.1, size=(9, 9))
    for block in (range(0, 3), range(3, 6), range(6, 9)):
        for i in block:
            for j in block:
                a[i, j] = 1 + rng.uniform()
    a = (a + a.T) / 2
    perm = rng.permutation(9)
    base = spectral_cluster(a, 3).labels
    moved = spectral_cluster(a[np.ix_(perm, perm)], 3).labels
    same = lambda lab: lab[:, None] == lab[None, :]
    np.testing.assert_array_equal(same(base)[np.ix_(perm, perm)], same(moved))


@pytest.mark.parametrize("bad, k", [
    (np.array([[0, 1], [0, 0]]), 1),
    (-np.ones((2, 2)), 1),
    (np.ones((2, 2)), 3),
    (np.ones((2, 3)), 1),
])
def test_spectral_validation(bad, k):
    with pytest.raises(ValueError):
        spectral_cluster(bad, k)


def test_mixture_single_class(iset):
    graphs = iset.by_class()[0]
    m = UniverseMetric.init(24, 8, seed=4)
    r = mixture_pipeline(graphs, m, 1)
    assert r.clusters.labels.tolist() == [0] * len(graphs)
    batch = batch_pairwise(graphs, m)
    assert set(r.matchings) == {(a, b) for a in range(len(graphs)) for b in range(a + 1, len(graphs))}
    for key, x in r.matchings.items():
        np.testing.assert_array_equal(x, batch[key])


def test_mixture_node_merged_separates():
    # no outliers: the planted metric has no direction for the absorbing node
    iset = generate(GenConfig(class_count=3, anchors_per_class=[5], feature_dim=24, graphs_per_class=6,
                              inlier_drop_range=(0, 1), seed=4))
    r = mixture_pipeline(iset.graphs, planted_metric(iset, NODE_MERGED), 3)
    classes = [g.class_id for g in iset.graphs]
    assert clustering_purity(r.clusters.labels, classes) == 1.0
    for (a, b), x in r.all_matchings.items():
        if classes[a] != classes[b]:
            assert not x.any()
        else:
            np.testing.assert_array_equal(x, derive_pairwise_gt(iset.graphs[a], iset.graphs[b]))


def test_mixture_feature_merged_overlaps(iset):
    r = mixture_pipeline(iset.graphs, planted_metric(iset, FEATURE_MERGED), 3)
    classes = [g.class_id for g in iset.graphs]
    cross = [x.any() for (a, b), x in r.all_matchings.items() if classes[a] != classes[b]]
    assert any(cross)
    node = mixture_pipeline(iset.graphs, planted_metric(iset, NODE_MERGED), 3)
    assert clustering_purity(r.clusters.labels, classes) <= clustering_purity(node.clusters.labels, classes)


def test_match_universe_order(iset):
    m = UniverseMetric.init(24, 8, seed=5)
    assignments, affs = match_universe(iset.graphs[:4], m)
    assert [a.graph_id for a in assignments] == [g.id for g in iset.graphs[:4]]
    assert len(affs) == 4
