"""Domain types shared across the package: graphs, universe descriptions,
matchings and node typing.

A *matching* is a plain ``numpy`` array of dtype ``int8`` holding a binary
partial permutation matrix. :func:`as_matching` validates the row/column
constraints and returns a read-only array, so every matching handed around by
the library is immutable.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

#: Sentinel used in ``GraphInstance.gt_universe`` for nodes that belong to the
#: absorbing anchor (planted outliers).
OUTLIER = -1

FEATURE_MERGED = "feature-merged"
NODE_MERGED = "node-merged"


class MatchingError(ValueError):
    """Raised when an array violates the partial-permutation constraints."""


def as_matching(x, shape: Optional[tuple] = None) -> np.ndarray:
    """Validate ``x`` as a binary partial permutation matrix.

    :param x: array-like of 0/1 entries, 2-d.
    :param shape: optional expected shape.
    :return: read-only ``int8`` copy of ``x``.
    :raises MatchingError: if ``x`` is not 2-d, not binary, or has a row or
        column summing to more than one.
    """
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise MatchingError(f"matching must be 2-d, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise MatchingError(f"matching shape {arr.shape} != expected {tuple(shape)}")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise MatchingError("matching entries must be 0 or 1")
    out = np.array(arr, dtype=np.int8)
    if out.size:
        if out.sum(axis=1).max() > 1:
            raise MatchingError("a row of the matching has more than one entry")
        if out.sum(axis=0).max() > 1:
            raise MatchingError("a column of the matching has more than one entry")
    out.flags.writeable = False
    return out


def empty_matching(n_a: int, n_b: int) -> np.ndarray:
    return as_matching(np.zeros((n_a, n_b), dtype=np.int8))


def matching_pairs(x: np.ndarray) -> list[tuple[int, int]]:
    """Matched ``(row, col)`` pairs in row-major order."""
    rows, cols = np.nonzero(x)
    return list(zip(rows.tolist(), cols.tolist()))


@dataclass(frozen=True)
class UniverseSpec:
    """Size and construction mode of the universe graph.

    ``n_u`` counts the absorbing node, which always sits at index ``n_u - 1``.
    The ``mode`` only documents intent (roughly ``max n_i + 1`` anchors for a
    feature-merged universe, ``sum n_i + 1`` for node-merged); it is not
    enforced.
    """

    n_u: int
    mode: str = FEATURE_MERGED
    class_count: int = 1

    def __post_init__(self):
        if self.n_u < 2:
            raise ValueError(f"n_u must be >= 2 (one anchor plus the absorbing node), got {self.n_u}")
        if self.mode not in (FEATURE_MERGED, NODE_MERGED):
            raise ValueError(f"unknown universe mode {self.mode!r}")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")

    @property
    def absorbing(self) -> int:
        return self.n_u - 1

    @classmethod
    def for_classes(cls, anchors_per_class: Sequence[int], mode: str = FEATURE_MERGED) -> "UniverseSpec":
        """Universe sized by the usual rule for ``mode``."""
        sizes = list(anchors_per_class)
        n = max(sizes) if mode == FEATURE_MERGED else sum(sizes)
        return cls(n_u=n + 1, mode=mode, class_count=len(sizes))

    def to_dict(self) -> dict:
        return {"n_u": self.n_u, "mode": self.mode, "class_count": self.class_count}

    @classmethod
    def from_dict(cls, d: dict) -> "UniverseSpec":
        return cls(n_u=int(d["n_u"]), mode=d.get("mode", FEATURE_MERGED), class_count=int(d.get("class_count", 1)))


@dataclass(frozen=True, eq=False)
class GraphInstance:
    """A graph reduced to its node features.

    ``gt_universe[i]`` is the planted anchor label of node ``i`` within its
    class, or :data:`OUTLIER`. Anchor labels are class-local; mapping them to
    universe columns depends on the :class:`UniverseSpec` and is done by
    :func:`universe_targets`.
    """

    id: str
    class_id: int
    features: np.ndarray
    gt_universe: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError(f"graph {self.id!r}: features must be (n >= 1, d), got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"graph {self.id!r}: non-finite features")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        if self.gt_universe is not None:
            gt = np.array(self.gt_universe, dtype=np.int64)
            if gt.shape != (feats.shape[0],):
                raise ValueError(f"graph {self.id!r}: gt_universe has shape {gt.shape}, expected ({feats.shape[0]},)")
            if np.any(gt < OUTLIER):
                raise ValueError(f"graph {self.id!r}: invalid anchor label in gt_universe")
            inl = gt[gt != OUTLIER]
            if len(np.unique(inl)) != len(inl):
                raise ValueError(f"graph {self.id!r}: two nodes share the same anchor")
            gt.flags.writeable = False
            object.__setattr__(self, "gt_universe", gt)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def universe_targets(graph: GraphInstance, spec: UniverseSpec, anchors_per_class: Sequence[int]) -> np.ndarray:
    """Map planted anchor labels onto universe columns in ``[0, n_u)``.

    Feature-merged universes share anchor slots across classes, node-merged
    ones give each class its own contiguous block. Outliers go to the
    absorbing column.
    """
    if graph.gt_universe is None:
        raise ValueError(f"graph {graph.id!r} has no ground truth")
    offset = 0
    if spec.mode == NODE_MERGED:
        offset = int(sum(anchors_per_class[: graph.class_id]))
    out = np.where(graph.gt_universe == OUTLIER, spec.absorbing, graph.gt_universe + offset)
    if np.any((graph.gt_universe != OUTLIER) & (out >= spec.absorbing)):
        raise ValueError(f"universe of size {spec.n_u} too small for graph {graph.id!r}")
    return out


class NodeType(enum.Enum):
    MATCHED_INLIER = "MI"
    UNMATCHED_INLIER = "UI"
    OUTLIER = "O"


def pgc(node: int, pair_gt: np.ndarray) -> int:
    """Pairwise correspondence: 1 iff ``node`` is matched in ``pair_gt``."""
    pair_gt = np.asarray(pair_gt)
    if not 0 <= node < pair_gt.shape[0]:
        raise IndexError(f"node {node} out of range for {pair_gt.shape[0]} rows")
    return int(pair_gt[node].sum() == 1)


def mgc(node: int, graph: GraphInstance, corpus: Sequence[tuple[GraphInstance, np.ndarray]]) -> int:
    """Multi-graph correspondence: 1 iff ``node`` is matched in any corpus matching.

    Every matching in ``corpus`` has ``graph``'s nodes as rows and the paired
    corpus graph's nodes as columns.
    """
    if not 0 <= node < graph.n:
        raise IndexError(f"node {node} out of range for graph of size {graph.n}")
    total = 0
    for other, x in corpus:
        x = np.asarray(x)
        if x.shape != (graph.n, other.n):
            raise ValueError(f"matching shape {x.shape} does not fit graphs ({graph.n}, {other.n})")
        total += int(x[node].sum())
    return int(total > 0)


def classify(pgc_bit: int, mgc_bit: int) -> NodeType:
    if pgc_bit:
        return NodeType.MATCHED_INLIER
    if mgc_bit:
        return NodeType.UNMATCHED_INLIER
    return NodeType.OUTLIER


def node_type(node: int, graph: GraphInstance, pair_gt: np.ndarray,
              corpus: Sequence[tuple[GraphInstance, np.ndarray]]) -> NodeType:
    return classify(pgc(node, pair_gt), mgc(node, graph, corpus))


def pair_node_types(pair_gt: np.ndarray, mgc_a: Sequence[int], mgc_b: Sequence[int]) -> tuple[list, list]:
    """Node types of both sides of a pair given precomputed MGC bits."""
    pair_gt = np.asarray(pair_gt)
    ta = [classify(int(pair_gt[i].sum() == 1), mgc_a[i]) for i in range(pair_gt.shape[0])]
    tb = [classify(int(pair_gt[:, j].sum() == 1), mgc_b[j]) for j in range(pair_gt.shape[1])]
    return ta, tb
