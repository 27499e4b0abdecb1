"""Synthetic partial-matching instances with a planted universe.

Every class owns a set of anchor prototypes (unit vectors, mutually
orthogonal whenever the feature dimension allows). A graph of a class keeps a
random subset of the class anchors, perturbs each prototype with Gaussian
noise, appends outlier nodes drawn uniformly from the prototypes' bounding box
and shuffles the node order.

On disk an instance set is a directory with ``manifest.json`` and
``graphs.jsonl`` (one graph record per line)::

    {"id": "c0_g3", "class_id": 0, "shape": [n, d],
     "features": [[...], ...], "gt_universe": [4, -1, 0, ...]}

``gt_universe`` holds class-local anchor labels with ``-1`` for outliers.
Keys are written in the order shown; floats use ``repr`` and round-trip
exactly.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import OUTLIER, GraphInstance, as_matching

FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid generation config; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class GenConfig:
    class_count: int = 1
    anchors_per_class: Sequence[int] = (10,)
    feature_dim: int = 32
    graphs_per_class: int = 10
    inlier_drop_range: tuple[int, int] = (0, 0)
    outlier_count_range: tuple[int, int] = (0, 0)
    feature_noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "anchors_per_class", tuple(int(a) for a in self.anchors_per_class))
        object.__setattr__(self, "inlier_drop_range", tuple(int(a) for a in self.inlier_drop_range))
        object.__setattr__(self, "outlier_count_range", tuple(int(a) for a in self.outlier_count_range))
        self.validate()

    def validate(self):
        if self.class_count < 1:
            raise ConfigError("class_count", "must be >= 1")
        if len(self.anchors_per_class) == 1 and self.class_count > 1:
            object.__setattr__(self, "anchors_per_class", self.anchors_per_class * self.class_count)
        if len(self.anchors_per_class) != self.class_count:
            raise ConfigError("anchors_per_class", f"expected {self.class_count} entries")
        if min(self.anchors_per_class) < 1:
            raise ConfigError("anchors_per_class", "every class needs at least one anchor")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim", "must be >= 1")
        if self.graphs_per_class < 1:
            raise ConfigError("graphs_per_class", "must be >= 1")
        for name in ("inlier_drop_range", "outlier_count_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigError(name, f"need 0 <= lo <= hi, got [{lo}, {hi}]")
        if self.inlier_drop_range[1] >= min(self.anchors_per_class):
            raise ConfigError("inlier_drop_range", "upper bound must be below the anchor count of the smallest class")
        if self.feature_noise_sigma < 0:
            raise ConfigError("feature_noise_sigma", "must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("anchors_per_class", "inlier_drop_range", "outlier_count_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config field")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from exc


@dataclass
class InstanceSet:
    graphs: list[GraphInstance]
    anchors_per_class: tuple[int, ...]
    feature_dim: int
    prototypes: Optional[np.ndarray] = None
    prototypes_orthogonal: bool = True
    config: Optional[dict] = None
    _by_id: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._by_id = {g.id: g for g in self.graphs}
        for g in self.graphs:
            if g.d != self.feature_dim:
                raise ValueError(f"graph {g.id!r} has feature dim {g.d}, expected {self.feature_dim}")

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self._by_id[key]
        return self.graphs[key]

    @property
    def class_count(self) -> int:
        return len(self.anchors_per_class)

    def class_ids(self) -> list[int]:
        return sorted({g.class_id for g in self.graphs})

    def by_class(self) -> dict[int, list[GraphInstance]]:
        out: dict[int, list[GraphInstance]] = {}
        for g in self.graphs:
            out.setdefault(g.class_id, []).append(g)
        return out

    def subset(self, graphs: Sequence[GraphInstance]) -> "InstanceSet":
        return InstanceSet(list(graphs), self.anchors_per_class, self.feature_dim, self.prototypes,
                           self.prototypes_orthogonal, self.config)

    def split(self, holdout_frac: float = 0.2, seed: int = 0) -> tuple["InstanceSet", "InstanceSet"]:
        """Per-class random split; at least one graph per class is held out
        when the class has two or more graphs."""
        rng = np.random.default_rng(seed)
        train, held = [], []
        for cid, gs in sorted(self.by_class().items()):
            order = rng.permutation(len(gs))
            k = int(round(holdout_frac * len(gs)))
            if len(gs) >= 2:
                k = min(max(k, 1), len(gs) - 1)
            else:
                k = 0
            held += [gs[i] for i in order[:k]]
            train += [gs[i] for i in order[k:]]
        return self.subset(train), self.subset(held)

    def mgc_bits(self, graph: GraphInstance) -> np.ndarray:
        """Per-node MGC against every other graph of the set, from planted labels."""
        others = set()
        for g in self.graphs:
            if g is not graph and g.class_id == graph.class_id:
                others.update(g.gt_universe[g.gt_universe != OUTLIER].tolist())
        gt = graph.gt_universe
        return np.array([int(a != OUTLIER and a in others) for a in gt.tolist()], dtype=np.int8)


def derive_pairwise_gt(a: GraphInstance, b: GraphInstance) -> np.ndarray:
    """Ground-truth matching between two graphs from their planted anchors.

    Nodes match when both are inliers of the same class carrying the same
    anchor label; graphs of different classes never match.
    """
    if a.gt_universe is None or b.gt_universe is None:
        raise ValueError("both graphs need gt_universe")
    if a.class_id != b.class_id:
        return as_matching(np.zeros((a.n, b.n), dtype=np.int8))
    ga = a.gt_universe[:, None]
    gb = b.gt_universe[None, :]
    return as_matching(((ga == gb) & (ga != OUTLIER)).astype(np.int8))


def _prototypes(rng: np.random.Generator, total: int, d: int) -> tuple[np.ndarray, bool]:
    g = rng.normal(size=(d, total))
    if total <= d:
        q, r = np.linalg.qr(g)
        # fix QR sign ambiguity so the draw is a deterministic function of g
        q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
        return q.T.copy(), True
    warnings.warn(f"{total} prototypes do not fit orthogonally in {d} dims; using random unit vectors")
    p = g.T
    return p / np.linalg.norm(p, axis=1, keepdims=True), False


def generate(config: GenConfig) -> InstanceSet:
    """Draw an instance set; fully determined by ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    sizes = config.anchors_per_class
    protos, ortho = _prototypes(rng, int(sum(sizes)), config.feature_dim)
    lo_box, hi_box = protos.min(axis=0), protos.max(axis=0)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])

    graphs = []
    for cid in range(config.class_count):
        n_anchor = sizes[cid]
        class_protos = protos[offsets[cid]: offsets[cid] + n_anchor]
        for gi in range(config.graphs_per_class):
            n_drop = int(rng.integers(config.inlier_drop_range[0], config.inlier_drop_range[1] + 1))
            kept = np.sort(rng.choice(n_anchor, size=n_anchor - n_drop, replace=False))
            n_out = int(rng.integers(config.outlier_count_range[0], config.outlier_count_range[1] + 1))
            inl = class_protos[kept] + config.feature_noise_sigma * rng.normal(size=(len(kept), config.feature_dim))
            out = rng.uniform(lo_box, hi_box, size=(n_out, config.feature_dim))
            feats = np.vstack([inl, out])
            labels = np.concatenate([kept, np.full(n_out, OUTLIER)]).astype(np.int64)
            order = rng.permutation(len(labels))
            graphs.append(GraphInstance(id=f"c{cid}_g{gi}", class_id=cid,
                                        features=feats[order], gt_universe=labels[order]))
    return InstanceSet(graphs, tuple(sizes), config.feature_dim, protos, ortho, config.to_dict())


def _atomic_write_text(path: Path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _graph_record(g: GraphInstance) -> dict:
    return {
        "id": g.id,
        "class_id": int(g.class_id),
        "shape": [g.n, g.d],
        "features": g.features.tolist(),
        "gt_universe": None if g.gt_universe is None else g.gt_universe.tolist(),
    }


def manifest(iset: InstanceSet) -> dict:
    counts = {}
    for g in iset.graphs:
        counts[str(g.class_id)] = counts.get(str(g.class_id), 0) + 1
    n_out = sum(int(np.sum(g.gt_universe == OUTLIER)) for g in iset.graphs if g.gt_universe is not None)
    return {
        "format_version": FORMAT_VERSION,
        "graph_count": len(iset.graphs),
        "graphs_per_class": counts,
        "node_count": int(sum(g.n for g in iset.graphs)),
        "outlier_count": n_out,
        "anchors_per_class": list(iset.anchors_per_class),
        "feature_dim": iset.feature_dim,
        "prototypes_orthogonal": iset.prototypes_orthogonal,
        "config": iset.config,
        "graph_ids": [g.id for g in iset.graphs],
        "prototypes": None if iset.prototypes is None else iset.prototypes.tolist(),
    }


def save_instance_set(iset: InstanceSet, out_dir) -> dict:
    """Write ``manifest.json`` and ``graphs.jsonl`` under ``out_dir`` atomically (per file)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = "".join(json.dumps(_graph_record(g)) + "\n" for g in iset.graphs)
    _atomic_write_text(out / "graphs.jsonl", lines)
    man = manifest(iset)
    _atomic_write_text(out / "manifest.json", json.dumps(man, indent=1) + "\n")
    return man


def load_instance_set(path) -> InstanceSet:
    path = Path(path)
    man = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    if man.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported instance-set format {man.get('format_version')!r}")
    graphs = []
    with open(path / "graphs.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            feats = np.array(rec["features"], dtype=np.float64).reshape(rec["shape"])
            graphs.append(GraphInstance(id=rec["id"], class_id=int(rec["class_id"]), features=feats,
                                        gt_universe=rec.get("gt_universe")))
    protos = man.get("prototypes")
    return InstanceSet(graphs, tuple(man["anchors_per_class"]), int(man["feature_dim"]),
                       None if protos is None else np.array(protos), bool(man.get("prototypes_orthogonal", True)),
                       man.get("config"))


def content_hash(path) -> str:
    """SHA-256 over the manifest and graph records of a saved set."""
    h = hashlib.sha256()
    for name in ("manifest.json", "graphs.jsonl"):
        h.update((Path(path) / name).read_bytes())
    return h.hexdigest()
