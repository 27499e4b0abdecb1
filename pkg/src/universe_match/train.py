"""Training the universe metric with plain momentum SGD.

Pairs of graphs are sampled either from a single class or, for the mixture
setting, half from one class and half across classes (whose ground truth is
the empty matching). All graphs of a batch go through one forward pass so the
normalization sees the whole batch.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .affinity import UniverseMetric, backward, forward
from .core import OUTLIER, UniverseSpec
from .datagen import InstanceSet, derive_pairwise_gt
from .loss import DEFAULT_EPS, PairBatchItem, bce_loss
from .metrics import f1
from .solver import infer_universe, reconstruct_pairwise

log = logging.getLogger(__name__)

SAME_CLASS = "same-class"
HALF_MIXED = "half-mixed"

CHECKPOINT_FORMAT = "universe-match-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    pairs_per_epoch: int = 1024
    batch_size: int = 8
    learning_rate: float = 0.04
    momentum: float = 0.9
    outlier_aware: bool = True
    sampling: str = SAME_CLASS
    universe: Optional[UniverseSpec] = None
    eps: float = DEFAULT_EPS
    seed: int = 0
    holdout_frac: float = 0.2

    def __post_init__(self):
        if isinstance(self.universe, dict):
            self.universe = UniverseSpec.from_dict(self.universe)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.pairs_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("pairs_per_epoch and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.sampling not in (SAME_CLASS, HALF_MIXED):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["universe"] = None if self.universe is None else self.universe.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config field {sorted(unknown)[0]!r}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def sample_pairs(dataset: InstanceSet, mode: str, count: int, rng: np.random.Generator):
    """Draw ``count`` training pairs ``(graph_a, graph_b, gt)``.

    ``same-class`` picks a class uniformly (among classes with two or more
    graphs) and two distinct graphs of it. ``half-mixed`` alternates such a
    pair with a cross-class pair, starting with same-class.
    """
    groups = dataset.by_class()
    pairable = sorted(c for c, gs in groups.items() if len(gs) >= 2)
    classes = sorted(groups)
    if mode == HALF_MIXED and len(classes) < 2:
        raise ValueError("half-mixed sampling needs at least two classes")
    if mode not in (SAME_CLASS, HALF_MIXED):
        raise ValueError(f"unknown sampling mode {mode!r}")
    if not pairable:
        raise ValueError("no class has two graphs to pair")
    out = []
    for k in range(count):
        if mode == HALF_MIXED and k % 2 == 1:
            ca, cb = rng.choice(classes, size=2, replace=False)
            ga = groups[int(ca)][rng.integers(len(groups[int(ca)]))]
            gb = groups[int(cb)][rng.integers(len(groups[int(cb)]))]
        else:
            c = pairable[rng.integers(len(pairable))]
            ia, ib = rng.choice(len(groups[c]), size=2, replace=False)
            ga, gb = groups[c][ia], groups[c][ib]
        out.append((ga, gb, derive_pairwise_gt(ga, gb)))
    return out


def batch_step(metric: UniverseMetric, pairs, outlier_aware: bool = True, eps: float = DEFAULT_EPS,
               training: bool = True):
    """Mean loss of a batch of pairs and the parameter gradients."""
    feats = []
    for ga, gb, _ in pairs:
        feats += [ga.features, gb.features]
    sizes = [f.shape[0] for f in feats]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    aff, cache = forward(metric, np.vstack(feats), training=training, return_cache=True)
    items = []
    for k, (_, _, gt) in enumerate(pairs):
        sa = aff.rows(bounds[2 * k], bounds[2 * k + 1])
        sb = aff.rows(bounds[2 * k + 1], bounds[2 * k + 2])
        items.append(PairBatchItem(sa, sb, gt, weight=1.0 / len(pairs)))
    loss, grads = bce_loss(items, outlier_aware=outlier_aware, eps=eps)
    grad_raw = np.vstack([g for pair in grads for g in pair])
    return loss, backward(metric, cache, grad_raw)


def evaluate(metric: UniverseMetric, dataset: InstanceSet) -> dict:
    """Mean pairwise F1 over all same-class pairs and the share of planted
    outliers whose most likely anchor is the absorbing one."""
    assignments, absorbed, n_out = {}, 0, 0
    for g in dataset.graphs:
        aff = forward(metric, g.features, training=False)
        assignments[g.id] = infer_universe(aff, g.id)
        if g.gt_universe is not None:
            mask = g.gt_universe == OUTLIER
            n_out += int(mask.sum())
            absorbed += int(np.sum(np.argmax(aff.prob[mask], axis=1) == metric.n_u - 1))
    scores = []
    for gs in dataset.by_class().values():
        for i in range(len(gs)):
            for j in range(i + 1, len(gs)):
                pred = reconstruct_pairwise(assignments[gs[i].id], assignments[gs[j].id])
                scores.append(f1(pred, derive_pairwise_gt(gs[i], gs[j]))[0])
    return {
        "f1": float(np.mean(scores)) if scores else float("nan"),
        "absorption": absorbed / n_out if n_out else float("nan"),
    }


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)

    def append(self, row: dict):
        self.epochs.append(row)

    def column(self, name: str) -> list:
        return [r[name] for r in self.epochs]

    def last(self) -> dict:
        return self.epochs[-1] if self.epochs else {}

    def to_csv(self) -> str:
        cols = ["epoch", "loss", "heldout_f1", "absorption"]
        lines = [",".join(cols)]
        for r in self.epochs:
            lines.append(",".join(repr(r[c]) for c in cols))
        return "\n".join(lines) + "\n"


def train(metric: UniverseMetric, dataset: InstanceSet, config: TrainConfig):
    """Fit ``metric`` on ``dataset``; returns a trained copy and the history.

    The held-out split (``holdout_frac`` of each class) is fixed by the seed
    before training and never sampled for updates.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.feature_dim != metric.d:
        raise ValueError(f"dataset feature dim {dataset.feature_dim} != metric dim {metric.d}")
    if config.universe is not None and config.universe.n_u != metric.n_u:
        raise ValueError(f"config universe size {config.universe.n_u} != metric size {metric.n_u}")
    metric = metric.copy()
    train_set, held = dataset.split(config.holdout_frac, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    velocity = {k: np.zeros_like(v) for k, v in metric.parameters().items()}
    history = History()
    for epoch in range(config.epochs):
        pairs = sample_pairs(train_set, config.sampling, config.pairs_per_epoch, rng)
        losses = []
        for b, start in enumerate(range(0, len(pairs), config.batch_size)):
            batch = pairs[start:start + config.batch_size]
            loss, grads = batch_step(metric, batch, config.outlier_aware, config.eps)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"non-finite loss or gradient at epoch {epoch}, batch {b}")
            losses.append(loss)
            for name, param in metric.parameters().items():
                velocity[name] *= config.momentum
                velocity[name] += grads[name]
                param -= config.learning_rate * velocity[name]
        ev = evaluate(metric, held if len(held) else train_set)
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "heldout_f1": ev["f1"],
               "absorption": ev["absorption"]}
        log.info("epoch %d loss %.4f f1 %.4f absorption %.3f", epoch, row["loss"], ev["f1"], ev["absorption"])
        history.append(row)
    return metric, history


def _array_entry(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def checkpoint_text(metric: UniverseMetric, config: Optional[TrainConfig] = None) -> str:
    spec = metric.spec or UniverseSpec(n_u=metric.n_u)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "universe": spec.to_dict(),
        "nonlinear": metric.nonlinear,
        "tau": metric.tau,
        "momentum": metric.momentum,
        "eps": metric.eps,
        "weight": _array_entry(metric.weight),
        "gamma": _array_entry(metric.gamma),
        "beta": _array_entry(metric.beta),
        "running_mean": _array_entry(metric.running_mean),
        "running_var": _array_entry(metric.running_var),
        "config_hash": None if config is None else config.digest(),
        "config": None if config is None else config.to_dict(),
    }
    return json.dumps(doc, indent=1) + "\n"


def save_checkpoint(metric: UniverseMetric, path, config: Optional[TrainConfig] = None):
    """Write a checkpoint via a temp file and rename; nothing is left on failure."""
    path = Path(path)
    text = checkpoint_text(metric, config)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _array(entry: dict) -> np.ndarray:
    return np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])


def load_checkpoint(path) -> tuple[UniverseMetric, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    metric = UniverseMetric(
        weight=_array(doc["weight"]), gamma=_array(doc["gamma"]), beta=_array(doc["beta"]),
        running_mean=_array(doc["running_mean"]), running_var=_array(doc["running_var"]),
        nonlinear=bool(doc["nonlinear"]), tau=float(doc["tau"]), momentum=float(doc["momentum"]),
        eps=float(doc["eps"]), spec=UniverseSpec.from_dict(doc["universe"]),
    )
    return metric, doc
