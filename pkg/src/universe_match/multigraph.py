"""Matching many graphs through the universe.

A :class:`MatchSession` admits graphs one at a time. Each admission costs one
forward pass and one assignment, independent of how many graphs are already
stored, and only the per-graph universe assignments are kept. Any pairwise
matching is read off two stored assignments on demand.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans

from . import solver
from .affinity import UniverseAffinity, UniverseMetric, forward, pairwise_affinity
from .core import GraphInstance, UniverseSpec
from .solver import UniverseAssignment, infer_universe, reconstruct_pairwise


@dataclass
class MatchSession:
    metric: UniverseMetric
    spec: Optional[UniverseSpec] = None
    stored: list[UniverseAssignment] = field(default_factory=list)
    affinities: list[UniverseAffinity] = field(default_factory=list)
    forward_count: int = 0
    hungarian_count: int = 0
    # per admission: (forwards, hungarian calls) it took
    op_log: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.spec is None:
            self.spec = self.metric.spec or UniverseSpec(n_u=self.metric.n_u)
        if self.spec.n_u != self.metric.n_u:
            raise ValueError("session universe size differs from the metric's")
        self._index: dict[str, int] = {}

    def __len__(self):
        return len(self.stored)

    def add(self, graph: GraphInstance) -> UniverseAssignment:
        """Match one new graph to the universe and store the result."""
        if graph.d != self.metric.d:
            raise ValueError(f"graph {graph.id!r} has feature dim {graph.d}, metric expects {self.metric.d}")
        f0, h0 = self.metric.forward_calls, solver.counters["hungarian"]
        aff = forward(self.metric, graph.features, training=False)
        assignment = infer_universe(aff, graph.id)
        df, dh = self.metric.forward_calls - f0, solver.counters["hungarian"] - h0
        self.forward_count += df
        self.hungarian_count += dh
        self.op_log.append((df, dh))
        self._index[graph.id] = len(self.stored)
        self.stored.append(assignment)
        self.affinities.append(aff)
        return assignment

    def _lookup(self, key) -> int:
        if isinstance(key, str):
            if key not in self._index:
                raise KeyError(f"graph {key!r} not admitted")
            return self._index[key]
        if not 0 <= key < len(self.stored):
            raise KeyError(f"no admitted graph at position {key}")
        return key

    def pairwise(self, i, j) -> np.ndarray:
        """Matching between two admitted graphs (positions or ids)."""
        return reconstruct_pairwise(self.stored[self._lookup(i)], self.stored[self._lookup(j)])


def session_add(session: MatchSession, graph: GraphInstance) -> UniverseAssignment:
    return session.add(graph)


def session_pairwise(session: MatchSession, i, j) -> np.ndarray:
    return session.pairwise(i, j)


def match_universe(graphs: Sequence[GraphInstance], metric: UniverseMetric):
    """Batch universe inference: ``(assignments, affinities)`` in input order."""
    affs = [forward(metric, g.features, training=False) for g in graphs]
    return [infer_universe(a, g.id) for a, g in zip(affs, graphs)], affs


def batch_pairwise(graphs: Sequence[GraphInstance], metric: UniverseMetric) -> dict[tuple[int, int], np.ndarray]:
    """All ordered pairwise matchings of a graph collection."""
    assignments, _ = match_universe(graphs, metric)
    return {(i, j): reconstruct_pairwise(assignments[i], assignments[j])
            for i in range(len(graphs)) for j in range(len(graphs))}


def affinity_score(xab, sa: UniverseAffinity, sb: UniverseAffinity) -> float:
    """Sum of the predicted matching masked onto the reconstructed affinity."""
    s_ab = pairwise_affinity(sa, sb)
    xab = np.asarray(xab)
    if xab.shape != s_ab.shape:
        raise ValueError(f"matching shape {xab.shape} != affinity shape {s_ab.shape}")
    return float(np.sum(xab * s_ab))


@dataclass
class ClusterResult:
    labels: np.ndarray
    k: int
    pairwise_scores: np.ndarray


def spectral_cluster(scores, k: int, seed: int = 0, n_init: int = 50) -> ClusterResult:
    """Normalized spectral clustering of a symmetric nonnegative score matrix.

    Top-``k`` eigenvectors of ``D^-1/2 A D^-1/2``, rows scaled to unit length,
    then k-means with a fixed seed keeping the best of ``n_init`` restarts.
    Graphs with zero total score get a zero degree weight.
    """
    a = np.asarray(scores, dtype=np.float64)
    m = a.shape[0]
    if a.shape != (m, m):
        raise ValueError("score matrix must be square")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ValueError("score matrix must be symmetric")
    if np.any(a < 0):
        raise ValueError("score matrix must be nonnegative")
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    a = 0.5 * (a + a.T)
    deg = a.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    lap = inv_sqrt[:, None] * a * inv_sqrt[None, :]
    try:
        _, vecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("eigensolver failed on the normalized affinity") from exc
    emb = vecs[:, ::-1][:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)
    if k == 1:
        labels = np.zeros(m, dtype=np.int64)
    else:
        km = KMeans(n_clusters=k, n_init=n_init, random_state=seed)
        labels = km.fit_predict(emb).astype(np.int64)
    return ClusterResult(labels=labels, k=k, pairwise_scores=a)


@dataclass
class MixtureResult:
    clusters: ClusterResult
    assignments: list[UniverseAssignment]
    affinities: list[UniverseAffinity]
    # (a, b) -> predicted matching, a < b, both in the same cluster
    matchings: dict[tuple[int, int], np.ndarray]
    all_matchings: dict[tuple[int, int], np.ndarray]


def mixture_pipeline(graphs: Sequence[GraphInstance], metric: UniverseMetric, k: int,
                     seed: int = 0) -> MixtureResult:
    """Match every graph to the universe, score all pairs, cluster, and
    report the matchings that fall inside a cluster."""
    if len(graphs) < k:
        raise ValueError(f"need at least k={k} graphs, got {len(graphs)}")
    assignments, affs = match_universe(graphs, metric)
    m = len(graphs)
    scores = np.zeros((m, m))
    all_x = {}
    for a in range(m):
        for b in range(a, m):
            x = reconstruct_pairwise(assignments[a], assignments[b])
            s = affinity_score(x, affs[a], affs[b])
            if a < b:
                s_rev = affinity_score(reconstruct_pairwise(assignments[b], assignments[a]), affs[b], affs[a])
                if not np.isclose(s, s_rev, rtol=1e-12, atol=1e-12):
                    raise AssertionError(f"affinity score of graphs {a}, {b} is not symmetric: {s} vs {s_rev}")
                all_x[(a, b)] = x
            scores[a, b] = scores[b, a] = s
    clusters = spectral_cluster(scores, k, seed=seed)
    within = {p: x for p, x in all_x.items() if clusters.labels[p[0]] == clusters.labels[p[1]]}
    return MixtureResult(clusters, assignments, affs, within, all_x)
