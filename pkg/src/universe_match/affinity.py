"""Universe metric layer.

Node features ``F_a`` (``n x d``) are mapped to universe affinities
``S_a = h(F_a) M`` where ``M`` (``d x n_u``) holds the learned anchor
directions and ``h`` is either the identity or per-channel normalization
followed by a rectifier. Row-wise softmax turns ``S_a`` into node-to-anchor
likelihoods whose last column is the absorbing anchor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import UniverseSpec

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class UniverseMetric:
    """Learnable parameters of the universe layer.

    :ivar weight: ``d x n_u`` map from (normalized) features to anchor scores.
    :ivar gamma, beta: per-channel scale and shift of the normalization.
    :ivar running_mean, running_var: normalization statistics used in
        evaluation mode.
    :ivar nonlinear: apply normalization + rectifier before ``weight``.
    :ivar tau: softmax temperature.
    """

    weight: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    nonlinear: bool = True
    tau: float = 1.0
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    spec: Optional[UniverseSpec] = None
    # operation counter; MatchSession relies on it
    forward_calls: int = field(default=0, compare=False)

    @classmethod
    def init(cls, d: int, spec: UniverseSpec | int, *, nonlinear: bool = True, tau: float = 1.0,
             seed: int | np.random.Generator = 0) -> "UniverseMetric":
        """Fresh metric with ``N(0, 1/d)`` weights and unit normalization state."""
        if isinstance(spec, int):
            spec = UniverseSpec(n_u=spec)
        if d < 1:
            raise ValueError("feature dimension must be >= 1")
        if tau <= 0:
            raise ValueError("tau must be positive")
        rng = np.random.default_rng(seed)
        return cls(
            weight=rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, spec.n_u)),
            gamma=np.ones(d),
            beta=np.zeros(d),
            running_mean=np.zeros(d),
            running_var=np.ones(d),
            nonlinear=nonlinear,
            tau=float(tau),
            spec=spec,
        )

    @property
    def d(self) -> int:
        return self.weight.shape[0]

    @property
    def n_u(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "UniverseMetric":
        return UniverseMetric(
            weight=self.weight.copy(), gamma=self.gamma.copy(), beta=self.beta.copy(),
            running_mean=self.running_mean.copy(), running_var=self.running_var.copy(),
            nonlinear=self.nonlinear, tau=self.tau, momentum=self.momentum, eps=self.eps,
            spec=self.spec,
        )

    def parameters(self) -> dict[str, np.ndarray]:
        """Learnable arrays by name (views, not copies)."""
        params = {"weight": self.weight}
        if self.nonlinear:
            params.update(gamma=self.gamma, beta=self.beta)
        return params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "gamma": self.gamma, "beta": self.beta,
                "running_mean": self.running_mean, "running_var": self.running_var}


@dataclass(frozen=True)
class UniverseAffinity:
    """Raw scores ``S_a`` and their row-softmax ``p^a`` for one set of nodes."""

    raw: np.ndarray
    prob: np.ndarray
    tau: float = 1.0

    @classmethod
    def from_raw(cls, raw, tau: float = 1.0) -> "UniverseAffinity":
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 2:
            raise ValueError("raw affinity must be 2-d")
        return cls(raw=raw, prob=softmax_rows(raw / tau), tau=tau)

    @property
    def n(self) -> int:
        return self.raw.shape[0]

    @property
    def n_u(self) -> int:
        return self.raw.shape[1]

    def rows(self, start: int, stop: int) -> "UniverseAffinity":
        return UniverseAffinity(self.raw[start:stop], self.prob[start:stop], self.tau)


@dataclass
class ForwardCache:
    """Intermediates of a forward pass needed by :func:`backward`."""

    hidden: np.ndarray
    xhat: Optional[np.ndarray] = None
    active: Optional[np.ndarray] = None


def forward(metric: UniverseMetric, features, training: bool = False,
            return_cache: bool = False):
    """Universe affinity of a set of nodes.

    In training mode the normalization uses the statistics of ``features``
    (all rows are one batch) and updates the running statistics in place;
    otherwise the running statistics are used.

    :param features: ``n x d`` node features.
    :return: :class:`UniverseAffinity`, plus a :class:`ForwardCache` when
        ``return_cache`` is set.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1:
        raise ValueError(f"features must be (n >= 1, d), got shape {f.shape}")
    if f.shape[1] != metric.d:
        raise ValueError(f"feature dim {f.shape[1]} != metric dim {metric.d}")
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite input features")
    metric.forward_calls += 1

    if metric.nonlinear:
        if training:
            mean = f.mean(axis=0)
            var = f.var(axis=0)
            m = metric.momentum
            metric.running_mean[:] = m * metric.running_mean + (1 - m) * mean
            metric.running_var[:] = m * metric.running_var + (1 - m) * var
        else:
            mean, var = metric.running_mean, metric.running_var
        xhat = (f - mean) / np.sqrt(var + metric.eps)
        pre = xhat * metric.gamma + metric.beta
        active = pre > 0
        hidden = np.where(active, pre, 0.0)
        cache = ForwardCache(hidden=hidden, xhat=xhat, active=active)
    else:
        hidden = f
        cache = ForwardCache(hidden=hidden)

    aff = UniverseAffinity.from_raw(hidden @ metric.weight, metric.tau)
    if return_cache:
        return aff, cache
    return aff


def backward(metric: UniverseMetric, cache: ForwardCache, grad_raw: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients from ``dL/dS_raw``.

    Features are inputs, not parameters, so the normalization statistics are
    constants here and ``gamma``/``beta`` enter linearly.
    """
    grads = {"weight": cache.hidden.T @ grad_raw}
    if metric.nonlinear:
        g_hidden = (grad_raw @ metric.weight.T) * cache.active
        grads["gamma"] = (g_hidden * cache.xhat).sum(axis=0)
        grads["beta"] = g_hidden.sum(axis=0)
    return grads


def softmax_backward(prob: np.ndarray, grad_prob: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Map ``dL/dp`` to ``dL/dS_raw`` through ``p = softmax(S_raw / tau)``."""
    inner = (grad_prob * prob).sum(axis=1, keepdims=True)
    return prob * (grad_prob - inner) / tau


def pairwise_affinity(sa: UniverseAffinity, sb: UniverseAffinity, use_raw: bool = False) -> np.ndarray:
    """Reconstructed pairwise node affinity ``S_ab = S_a S_b^T``.

    By default the row-stochastic probabilities are used, which keeps every
    entry in ``[0, 1]``; ``use_raw`` multiplies the raw scores instead.
    """
    if sa.n_u != sb.n_u:
        raise ValueError(f"universe size mismatch: {sa.n_u} vs {sb.n_u}")
    if use_raw:
        return sa.raw @ sb.raw.T
    return sa.prob @ sb.prob.T


def build_ku(s_ab) -> np.ndarray:
    """Affinity matrix ``K^u`` induced by a nonnegative node affinity.

    ``K[(i,k),(j,l)] = s_ab[i,k] * s_ab[j,l]`` with pairs indexed as in the
    column-major ``vec(X)``, so ``K`` is the outer product of ``vec(s_ab)``
    with itself and its diagonal holds ``s_ab**2``.
    """
    s = np.asarray(s_ab, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("s_ab must be 2-d")
    if np.any(s < 0):
        raise ValueError("build_ku requires nonnegative affinities")
    v = s.reshape(-1, order="F")
    return np.outer(v, v)


def qap_score(K, X) -> float:
    """``vec(X)^T K vec(X)`` with column-major vectorization."""
    K = np.asarray(K, dtype=np.float64)
    X = np.asarray(X)
    nn = X.size
    if K.shape != (nn, nn):
        raise ValueError(f"K has shape {K.shape}, expected ({nn}, {nn}) for X of shape {X.shape}")
    v = X.reshape(-1, order="F").astype(np.float64)
    return float(v @ K @ v)
