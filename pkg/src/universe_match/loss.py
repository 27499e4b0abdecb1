"""Matching probabilities and the binary cross-entropy losses on them.

Two nodes ``i`` (graph a) and ``j`` (graph b) match with probability
``p_ij = <p^a_i, p^b_j>``, the chance both land on the same universe anchor.
The outlier-aware variant drops the absorbing column from the inner product,
so two nodes that both sit on the absorbing anchor are *not* considered a
match. Negative pairs then stop pushing outliers apart, and every negative
pair pulls mass toward the absorbing anchor instead.

Gradients are taken with respect to the raw (pre-softmax) affinities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .affinity import UniverseAffinity, softmax_backward

DEFAULT_EPS = 1e-7


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class PairBatchItem:
    sa: UniverseAffinity
    sb: UniverseAffinity
    gt: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        if self.sa.n_u != self.sb.n_u:
            raise ValueError(f"universe size mismatch: {self.sa.n_u} vs {self.sb.n_u}")
        if np.asarray(self.gt).shape != (self.sa.n, self.sb.n):
            raise ValueError(f"gt shape {np.asarray(self.gt).shape} != ({self.sa.n}, {self.sb.n})")


def _check_index(aff: UniverseAffinity, i: int, name: str):
    if not 0 <= i < aff.n:
        raise IndexError(f"{name}={i} out of range for {aff.n} nodes")


def match_prob(sa: UniverseAffinity, sb: UniverseAffinity, i: int, j: int) -> float:
    _check_index(sa, i, "i")
    _check_index(sb, j, "j")
    return float(sa.prob[i] @ sb.prob[j])


def partial_match_prob(sa: UniverseAffinity, sb: UniverseAffinity, i: int, j: int) -> float:
    """Match probability ignoring the absorbing anchor."""
    if sa.n_u < 2:
        raise ValueError("need at least one anchor besides the absorbing node")
    _check_index(sa, i, "i")
    _check_index(sb, j, "j")
    return float(sa.prob[i, :-1] @ sb.prob[j, :-1])


def pair_probabilities(sa: UniverseAffinity, sb: UniverseAffinity, outlier_aware: bool) -> np.ndarray:
    if outlier_aware:
        return sa.prob[:, :-1] @ sb.prob[:, :-1].T
    return sa.prob @ sb.prob.T


def pair_loss(sa: UniverseAffinity, sb: UniverseAffinity, gt, outlier_aware: bool = True,
              eps: float = DEFAULT_EPS, weight: float = 1.0):
    """Loss of one pair and its gradients w.r.t. both raw affinities.

    Probabilities are clipped to ``[eps, 1 - eps]`` before the logs; clipped
    entries contribute no gradient, matching the loss actually computed.

    :return: ``(loss, grad_a, grad_b)``.
    """
    x = np.asarray(gt, dtype=np.float64)
    p = pair_probabilities(sa, sb, outlier_aware)
    pc = np.clip(p, eps, 1.0 - eps)
    loss = -weight * float(np.sum(x * np.log(pc) + (1.0 - x) * np.log1p(-pc)))

    inside = (p >= eps) & (p <= 1.0 - eps)
    g = weight * np.where(inside, (1.0 - x) / (1.0 - pc) - x / pc, 0.0)

    cols = slice(0, sa.n_u - 1) if outlier_aware else slice(None)
    gpa = np.zeros_like(sa.prob)
    gpb = np.zeros_like(sb.prob)
    gpa[:, cols] = g @ sb.prob[:, cols]
    gpb[:, cols] = g.T @ sa.prob[:, cols]
    return loss, softmax_backward(sa.prob, gpa, sa.tau), softmax_backward(sb.prob, gpb, sb.tau)


def bce_loss(items: Sequence[PairBatchItem], outlier_aware: bool = True, eps: float = DEFAULT_EPS):
    """Summed BCE over a batch of pairs.

    :return: ``(loss, grads)`` where ``grads[k] = (dL/dS^a_raw, dL/dS^b_raw)``
        for item ``k``.
    :raises NonFiniteLossError: naming the offending item and entry.
    """
    total = 0.0
    grads = []
    for k, item in enumerate(items):
        loss, ga, gb = pair_loss(item.sa, item.sb, item.gt, outlier_aware, eps, item.weight)
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"non-finite loss in batch item {k}")
        for name, g in (("a", ga), ("b", gb)):
            bad = np.argwhere(~np.isfinite(g))
            if len(bad):
                raise NonFiniteLossError(f"non-finite gradient in batch item {k}, graph {name}, entry {tuple(bad[0])}")
        total += loss
        grads.append((ga, gb))
    return total, grads


def vanilla_grad_entry(sa: UniverseAffinity, sb: UniverseAffinity, i: int, j: int, t: int, x_ij: int) -> float:
    """Closed-form ``dL_ij/dS^a_it`` of the single-term vanilla loss (no clamp).

    ``p^a_it * sum_k p^a_ik (p^b_jk - p^b_jt)`` scaled by ``1/p_ij`` for a
    positive pair, sign flipped and scaled by ``1/(1 - p_ij)`` for a negative
    one. Summed over ``t`` it vanishes.
    """
    _check_index(sa, i, "i")
    _check_index(sb, j, "j")
    if not 0 <= t < sa.n_u:
        raise IndexError(f"t={t} out of range for {sa.n_u} anchors")
    pa, pb = sa.prob[i], sb.prob[j]
    p = float(pa @ pb)
    spread = float(pa @ (pb - pb[t]))
    if x_ij:
        return pa[t] * spread / p / sa.tau
    return -pa[t] * spread / (1.0 - p) / sa.tau


def outlier_grad_absorbing(sa: UniverseAffinity, sb: UniverseAffinity, i: int, j: int, x_ij: int,
                           eps: float = DEFAULT_EPS) -> float:
    """Closed-form ``dL'_ij/dS^a_in`` on the absorbing column, outlier-aware loss.

    ``p^a_in`` for a positive pair and ``-p^a_in p'_ij / (1 - p'_ij)`` for a
    negative one, so the negative-pair gradient never has positive sign.
    ``p'_ij`` is clipped to ``[eps, 1 - eps]``.
    """
    p_part = float(np.clip(partial_match_prob(sa, sb, i, j), eps, 1.0 - eps))
    p_in = float(sa.prob[i, -1])
    if x_ij:
        return p_in / sa.tau
    return -p_in * p_part / (1.0 - p_part) / sa.tau
