"""Central finite-difference checks of the hand-derived gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affinity import UniverseAffinity, UniverseMetric, backward, forward
from .loss import DEFAULT_EPS, pair_loss

FD_STEP = 1e-5


def rel_error(analytic, numeric, floor: float = 1e-12) -> float:
    """Norm-wise ``||a - n|| / max(||a||, ||n||)``; zero when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numeric_grad(fn, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of the scalar ``fn`` at ``x`` (perturbed in place, then restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = fn()
        x[idx] = old - h
        down = fn()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def random_pair(rng: np.random.Generator, max_n: int = 6, max_nu: int = 10, scale: float = 1.0):
    """Random raw affinities of two graphs and a random partial matching."""
    n_a = int(rng.integers(1, max_n + 1))
    n_b = int(rng.integers(1, max_n + 1))
    n_u = int(rng.integers(2, max_nu + 1))
    ra = scale * rng.normal(size=(n_a, n_u))
    rb = scale * rng.normal(size=(n_b, n_u))
    k = int(rng.integers(0, min(n_a, n_b) + 1))
    gt = np.zeros((n_a, n_b), dtype=np.int8)
    gt[rng.choice(n_a, k, replace=False), rng.choice(n_b, k, replace=False)] = 1
    return ra, rb, gt


def loss_gradcheck(ra: np.ndarray, rb: np.ndarray, gt, outlier_aware: bool, tau: float = 1.0,
                   h: float = FD_STEP, eps: float = DEFAULT_EPS) -> float:
    """Relative error of the pair-loss gradient w.r.t. both raw affinities."""
    ra = np.array(ra, dtype=np.float64)
    rb = np.array(rb, dtype=np.float64)

    def value():
        sa = UniverseAffinity.from_raw(ra, tau)
        sb = UniverseAffinity.from_raw(rb, tau)
        return pair_loss(sa, sb, gt, outlier_aware, eps)[0]

    _, ga, gb = pair_loss(UniverseAffinity.from_raw(ra, tau), UniverseAffinity.from_raw(rb, tau),
                          gt, outlier_aware, eps)
    na = numeric_grad(value, ra, h)
    nb = numeric_grad(value, rb, h)
    return max(rel_error(ga, na), rel_error(gb, nb))


def metric_gradcheck(metric: UniverseMetric, fa, fb, gt, outlier_aware: bool = True,
                     h: float = FD_STEP) -> dict[str, float]:
    """Relative error of every parameter gradient of one pair loss.

    Runs the metric in evaluation mode so its state is left untouched.
    """
    metric = metric.copy()

    def value():
        sa = forward(metric, fa)
        sb = forward(metric, fb)
        return pair_loss(sa, sb, gt, outlier_aware)[0]

    sa, ca = forward(metric, fa, return_cache=True)
    sb, cb = forward(metric, fb, return_cache=True)
    _, ga, gb = pair_loss(sa, sb, gt, outlier_aware)
    grads_a = backward(metric, ca, ga)
    grads_b = backward(metric, cb, gb)
    out = {}
    for name, param in metric.parameters().items():
        out[name] = rel_error(grads_a[name] + grads_b[name], numeric_grad(value, param, h))
    return out


@dataclass
class GradcheckReport:
    instances: int
    max_rel_error: float
    worst: dict

    @property
    def max_rel_error_vanilla(self) -> float:
        return self.worst["vanilla"]

    @property
    def max_rel_error_outlier_aware(self) -> float:
        return self.worst["outlier_aware"]


def run_loss_gradcheck(count: int = 100, seed: int = 0, max_n: int = 6, max_nu: int = 10,
                       h: float = FD_STEP) -> GradcheckReport:
    """Check both losses on ``count`` seeded random pairs."""
    rng = np.random.default_rng(seed)
    worst = {"vanilla": 0.0, "outlier_aware": 0.0}
    for _ in range(count):
        ra, rb, gt = random_pair(rng, max_n, max_nu)
        worst["vanilla"] = max(worst["vanilla"], loss_gradcheck(ra, rb, gt, False, h=h))
        worst["outlier_aware"] = max(worst["outlier_aware"], loss_gradcheck(ra, rb, gt, True, h=h))
    return GradcheckReport(count, max(worst.values()), worst)
