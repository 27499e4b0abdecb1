"""Evaluation metrics for partial matching and for mixture clustering."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .core import NodeType


def _same_shape(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def confusion(pred, gt) -> tuple[int, int, int]:
    """Entrywise ``(TP, FP, FN)`` counts."""
    p, g = _same_shape(pred, gt)
    return int(np.sum(p & g)), int(np.sum(p & ~g)), int(np.sum(~p & g))


def f1(pred, gt) -> tuple[float, float, float]:
    """``(f1, precision, recall)`` of a predicted matching.

    An empty prediction against an empty ground truth scores 1 on all three;
    precision of an empty prediction is otherwise 0, as is recall against an
    empty ground truth.
    """
    tp, fp, fn = confusion(pred, gt)
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return tp / (tp + 0.5 * (fp + fn)), precision, recall


def accuracy(pred, gt, normalize: str = "pred") -> float:
    """``1 - ||X - X_gt||_F^2 / ||X||_F^2``.

    The default normalizes by the prediction and can go negative;
    ``normalize="gt"`` divides by ``||X_gt||_F^2`` instead. A zero
    denominator gives 1 when the numerator is also zero, else 0.
    """
    p, g = _same_shape(pred, gt)
    err = float(np.sum(p ^ g))
    if normalize == "pred":
        denom = float(p.sum())
    elif normalize == "gt":
        denom = float(g.sum())
    else:
        raise ValueError(f"unknown normalization {normalize!r}")
    if denom == 0:
        return 1.0 if err == 0 else 0.0
    return 1.0 - err / denom


@dataclass
class MatchTypeCounts:
    correct: int = 0
    mismatching: int = 0
    ill_matching: int = 0
    over_matching: int = 0

    @property
    def total(self) -> int:
        return self.correct + self.mismatching + self.ill_matching + self.over_matching

    def __iadd__(self, other: "MatchTypeCounts"):
        self.correct += other.correct
        self.mismatching += other.mismatching
        self.ill_matching += other.ill_matching
        self.over_matching += other.over_matching
        return self

    def ratios(self) -> dict[str, float]:
        t = self.total
        return {k: (v / t if t else 0.0) for k, v in asdict(self).items()}


def match_types(pred, types_a: Sequence[NodeType], types_b: Sequence[NodeType], gt) -> MatchTypeCounts:
    """Classify every predicted pair by the node types of its endpoints.

    A pair present in ``gt`` is correct. Otherwise any outlier endpoint makes
    it an over-matching, any unmatched-inlier endpoint an ill-matching, and two
    matched inliers a mismatching.
    """
    p, g = _same_shape(pred, gt)
    if len(types_a) != p.shape[0] or len(types_b) != p.shape[1]:
        raise ValueError("node type sequences do not match the matching shape")
    out = MatchTypeCounts()
    for i, j in zip(*np.nonzero(p)):
        ends = (types_a[i], types_b[j])
        if g[i, j]:
            out.correct += 1
        elif NodeType.OUTLIER in ends:
            out.over_matching += 1
        elif NodeType.UNMATCHED_INLIER in ends:
            out.ill_matching += 1
        else:
            out.mismatching += 1
    return out


def _contingency(labels, gt_labels) -> np.ndarray:
    labels = np.asarray(labels)
    gt_labels = np.asarray(gt_labels)
    if labels.shape != gt_labels.shape:
        raise ValueError("label sequences differ in length")
    _, li = np.unique(labels, return_inverse=True)
    _, gi = np.unique(gt_labels, return_inverse=True)
    table = np.zeros((li.max() + 1, gi.max() + 1), dtype=np.int64)
    np.add.at(table, (li, gi), 1)
    return table


def clustering_purity(labels, gt_labels) -> float:
    table = _contingency(labels, gt_labels)
    return float(table.max(axis=1).sum() / table.sum())


def rand_index(labels, gt_labels) -> float:
    """Fraction of unordered graph pairs on which both partitions agree."""
    labels = np.asarray(labels)
    gt_labels = np.asarray(gt_labels)
    m = len(labels)
    if m < 2:
        return 1.0
    same_p = labels[:, None] == labels[None, :]
    same_g = gt_labels[:, None] == gt_labels[None, :]
    iu = np.triu_indices(m, 1)
    return float(np.mean(same_p[iu] == same_g[iu]))


def clustering_accuracy(labels, gt_labels) -> float:
    """One minus the normalized count of mixed pairs inside and across clusters.

    Sums run over ordered pairs of distinct ground-truth classes within a
    predicted cluster, and ordered pairs of distinct predicted clusters
    sharing a class; ``k`` is the number of predicted clusters.
    """
    t = _contingency(labels, gt_labels).astype(np.float64)
    size = t.sum(axis=1)
    k = t.shape[0]
    within = 0.0
    for i in range(k):
        row = t[i]
        within += (row.sum() ** 2 - (row ** 2).sum()) / size[i] ** 2
    across = 0.0
    for i1 in range(k):
        for i2 in range(k):
            if i1 != i2:
                across += float(t[i1] @ t[i2]) / (size[i1] * size[i2])
    return 1.0 - (within + across) / k


def within_cluster_mean(labels, per_pair, as_written: bool = False) -> float:
    """Average of a per-pair matching score over unordered pairs inside clusters.

    Clusters are weighted equally; singletons carry no pairs and are skipped.
    ``as_written`` returns ``1 - (1/k) sum_j |C_j|^-2 sum_pairs score``
    instead, the literal typeset form.
    """
    labels = np.asarray(labels)
    per_pair = np.asarray(per_pair, dtype=np.float64)
    if per_pair.shape != (len(labels), len(labels)):
        raise ValueError("per-pair score matrix does not match the number of graphs")
    clusters = [np.flatnonzero(labels == c) for c in np.unique(labels)]
    if as_written:
        acc = sum(sum(per_pair[a, b] for a, b in combinations(idx, 2)) / len(idx) ** 2 for idx in clusters)
        return 1.0 - acc / len(clusters)
    means = [np.mean([per_pair[a, b] for a, b in combinations(idx, 2)]) for idx in clusters if len(idx) > 1]
    return float(np.mean(means)) if means else 1.0


@dataclass
class ClusteringScores:
    cp: float
    ri: float
    ca: float
    f1c: float
    mac: float


def clustering_metrics(result, gt_labels, per_pair_f1, per_pair_acc, as_written: bool = False) -> ClusteringScores:
    """CP, RI, CA and the within-cluster F1 / accuracy averages.

    :param result: a :class:`~universe_match.multigraph.ClusterResult` or a
        plain label sequence.
    """
    labels = getattr(result, "labels", result)
    return ClusteringScores(
        cp=clustering_purity(labels, gt_labels),
        ri=rand_index(labels, gt_labels),
        ca=clustering_accuracy(labels, gt_labels),
        f1c=within_cluster_mean(labels, per_pair_f1, as_written),
        mac=within_cluster_mean(labels, per_pair_acc, as_written),
    )
