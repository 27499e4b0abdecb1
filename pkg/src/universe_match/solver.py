"""Discrete inference on universe affinities.

Each graph is matched to the universe independently: rows whose most likely
anchor is the absorbing one are dropped as outliers, the absorbing column is
removed, and a rectangular Hungarian assignment places the remaining nodes on
distinct anchors. Pairwise matchings are then read off the two universe
assignments, which makes every reconstructed set of matchings cycle
consistent.
"""
from __future__ import annotations

import itertools
from collections import Counter, deque
from dataclasses import dataclass

import numpy as np

from .affinity import UniverseAffinity
from .core import OUTLIER, as_matching

#: Invocation counts of the solver entry points (``"hungarian"``).
counters: Counter = Counter()

_TIGHT_RTOL = 1e-9


def _solve_square(cost: np.ndarray):
    """Min-cost perfect assignment on a square matrix.

    Shortest augmenting path with row/column potentials, O(N^3).
    Returns ``(col_of_row, u, v)`` with ``u[i] + v[j] <= cost[i, j]`` and
    equality on the assignment.
    """
    n = cost.shape[0]
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = cost
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[j]: row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[owner[1:] - 1] = np.arange(n)
    return col_of_row, u[1:], v[1:]


def _reroute(tight, match, owner, fixed_row, fixed_col, r, c) -> bool:
    """Force ``r -> c`` keeping a perfect matching inside ``tight``.

    Searches an alternating path from the row that loses ``c`` to the column
    that ``r`` gives up, avoiding fixed rows/columns. Mutates ``match`` and
    ``owner`` only on success.
    """
    c_old = match[r]
    r_free = owner[c]
    n = len(match)
    prev_col = {}  # column -> row that reached it
    seen_rows = {r_free}
    queue = deque([r_free])
    found = False
    while queue and not found:
        row = queue.popleft()
        for col in np.flatnonzero(tight[row]):
            col = int(col)
            if fixed_col[col] or col == c or col in prev_col:
                continue
            prev_col[col] = row
            if col == c_old:
                found = True
                break
            nxt = int(owner[col])
            if nxt != r and not fixed_row[nxt] and nxt not in seen_rows:
                seen_rows.add(nxt)
                queue.append(nxt)
    if not found:
        return False
    col = c_old
    while True:
        row = prev_col[col]
        prev = int(match[row])
        match[row] = col
        owner[col] = row
        if row == r_free:
            break
        col = prev
    match[r] = c
    owner[c] = r
    assert len(set(match.tolist())) == n
    return True


def _lexmin(tight, match, n_real_rows, n_real_cols):
    """Lexicographically smallest optimum among perfect matchings of ``tight``.

    Rows are fixed in order; each takes the smallest real column that still
    admits a completion, and a dummy column (unassigned) only if none does.
    """
    n = len(match)
    owner = np.empty(n, dtype=np.int64)
    owner[match] = np.arange(n)
    fixed_row = np.zeros(n, dtype=bool)
    fixed_col = np.zeros(n, dtype=bool)
    for r in range(n_real_rows):
        cur = int(match[r])
        for c in np.flatnonzero(tight[r, :n_real_cols]):
            c = int(c)
            if c >= cur:
                break
            if fixed_col[c]:
                continue
            if _reroute(tight, match, owner, fixed_row, fixed_col, r, c):
                break
        fixed_row[r] = True
        fixed_col[match[r]] = True
    return match


def hungarian(scores, maximize: bool = True) -> np.ndarray:
    """Optimal rectangular assignment of ``min(n, m)`` pairs.

    Among several optima the one whose sorted ``(row, col)`` list is
    lexicographically smallest is returned (earlier rows prefer lower
    columns; leaving a row unassigned ranks after every column).

    :param scores: ``n x m`` finite matrix; ``n`` or ``m`` may be zero.
    :param maximize: maximize total score, otherwise minimize.
    :return: ``n x m`` binary partial permutation matrix.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("scores must be 2-d")
    if not np.all(np.isfinite(s)):
        raise ValueError("hungarian requires finite scores")
    counters["hungarian"] += 1
    n, m = s.shape
    out = np.zeros((n, m), dtype=np.int8)
    if n == 0 or m == 0:
        return as_matching(out)
    size = max(n, m)
    cost = np.zeros((size, size))
    cost[:n, :m] = -s if maximize else s
    match, u, v = _solve_square(cost)
    scale = max(1.0, float(np.abs(cost).max()))
    reduced = cost - u[:, None] - v[None, :]
    tight = reduced <= _TIGHT_RTOL * scale * size
    tight[np.arange(size), match] = True
    match = _lexmin(tight, match, n, m)
    rows = np.arange(n)
    real = match[:n] < m
    out[rows[real], match[:n][real]] = 1
    return as_matching(out)


def brute_force_assignment(scores, maximize: bool = True):
    """Exhaustive optimum over all injections of ``min(n, m)`` pairs.

    Test oracle only; exponential.
    :return: ``(best_value, list_of_optimal_pair_tuples)``.
    """
    s = np.asarray(scores, dtype=np.float64)
    n, m = s.shape
    if n <= m:
        perms = (tuple(zip(range(n), cols)) for cols in itertools.permutations(range(m), n))
    else:
        perms = (tuple(sorted(zip(rows, range(m)))) for rows in itertools.permutations(range(n), m))
    best, argbest = None, []
    sign = 1.0 if maximize else -1.0
    for pairs in perms:
        val = sign * sum(s[i, j] for i, j in pairs)
        if best is None or val > best + 1e-12:
            best, argbest = val, [pairs]
        elif abs(val - best) <= 1e-12:
            argbest.append(pairs)
    return sign * (best if best is not None else 0.0), argbest


@dataclass(frozen=True)
class UniverseAssignment:
    """Anchor of every node of one graph, :data:`~universe_match.core.OUTLIER` for dropped nodes."""

    graph_id: str
    assign: np.ndarray
    n_u: int
    score: float = 0.0

    def __post_init__(self):
        a = np.array(self.assign, dtype=np.int64)
        inl = a[a != OUTLIER]
        if np.any((inl < 0) | (inl >= self.n_u - 1)):
            raise ValueError("anchor index outside [0, n_u - 1)")
        if len(np.unique(inl)) != len(inl):
            raise ValueError("two nodes assigned to the same anchor")
        a.flags.writeable = False
        object.__setattr__(self, "assign", a)

    @property
    def n(self) -> int:
        return len(self.assign)

    def filled(self) -> np.ndarray:
        """``n x (n_u - 1)`` universe matching with outlier rows zero."""
        x = np.zeros((self.n, self.n_u - 1), dtype=np.int8)
        rows = np.flatnonzero(self.assign != OUTLIER)
        x[rows, self.assign[rows]] = 1
        return x


def outlier_filter(s: UniverseAffinity):
    """Drop rows whose most likely anchor is the absorbing one.

    Ties at the maximum go to the lowest column, so the absorbing (last)
    column only wins strictly.

    :return: ``(kept_rows, s_prime)`` with ``s_prime`` the kept rows of the
        probabilities without the absorbing column.
    """
    if s.n_u < 2:
        raise ValueError("need at least one anchor besides the absorbing node")
    kept = np.flatnonzero(np.argmax(s.prob, axis=1) != s.n_u - 1)
    return kept, s.prob[kept, :-1]


def infer_universe(s: UniverseAffinity, graph_id: str = "") -> UniverseAssignment:
    """Filter outliers, then assign kept nodes to distinct anchors.

    Kept rows left over when they outnumber the ``n_u - 1`` anchors are
    reported as outliers too.
    """
    kept, sp = outlier_filter(s)
    assign = np.full(s.n, OUTLIER, dtype=np.int64)
    x = hungarian(sp, maximize=True)
    r, c = np.nonzero(x)
    assign[kept[r]] = c
    score = float(sp[r, c].sum())
    return UniverseAssignment(graph_id=graph_id, assign=assign, n_u=s.n_u, score=score)


def reconstruct_pairwise(xa: UniverseAssignment, xb: UniverseAssignment) -> np.ndarray:
    """``X_ab = X_au X_bu^T`` with the absorbing column removed."""
    if xa.n_u != xb.n_u:
        raise ValueError(f"universe size mismatch: {xa.n_u} vs {xb.n_u}")
    a = xa.assign[:, None]
    b = xb.assign[None, :]
    return as_matching(((a == b) & (a != OUTLIER)).astype(np.int8))
