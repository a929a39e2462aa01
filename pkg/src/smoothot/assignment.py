"""Exact discrete Monge problem under squared Euclidean cost.

The optimum is computed with :func:`scipy.optimize.linear_sum_assignment`.
Among several optimal bijections the lexicographically smallest permutation
is returned, so results do not depend on solver internals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Dataset, PairedSamples, as_dataset
from .errors import DimensionMismatchError, ValidationError

__all__ = [
    "CostMatrix",
    "Assignment",
    "build_cost_matrix",
    "solve_assignment",
    "pair_samples",
    "assignment_duals",
]


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray

    def __post_init__(self):
        c = np.array(self.entries, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
            raise ValidationError(f"cost matrix must be square and nonempty, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("cost matrix has non-finite entries")
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class Assignment:
    """``permutation[i]`` is the target index matched to source ``i``."""

    permutation: np.ndarray
    total_cost: float


def build_cost_matrix(ds0, ds1) -> CostMatrix:
    """Squared Euclidean distances ``entries[i, j] = ||x0_i - x1_j||^2``.

    Coordinates are accumulated left to right, one squared difference at a
    time, so every entry has a fixed, documented rounding order.
    """
    ds0, ds1 = as_dataset(ds0), as_dataset(ds1)
    if ds0.n != ds1.n or ds0.d != ds1.d:
        raise DimensionMismatchError(
            f"cannot pair samples of shapes {ds0.points.shape} and {ds1.points.shape}"
        )
    x, y = ds0.points, ds1.points
    c = np.zeros((ds0.n, ds1.n))
    for k in range(ds0.d):
        diff = x[:, k, None] - y[None, :, k]
        c += diff * diff
    return CostMatrix(c)


def assignment_duals(c: np.ndarray, perm: np.ndarray):
    """Dual potentials ``(u, v)`` certifying the optimality of ``perm``.

    ``c[i, j] - u[i] - v[j] >= 0`` up to rounding, with equality on matched
    pairs. ``v`` is the shortest-path potential of the column graph with
    edges ``perm[i] -> j`` of weight ``c[i, j] - c[i, perm[i]]``; it has no
    negative cycle exactly when ``perm`` is optimal.
    """
    n = c.shape[0]
    matched = c[np.arange(n), perm]
    # row r of w holds the edges leaving column perm[r]; transpose for a
    # contiguous reduction over predecessors
    w = np.empty_like(c)
    w[perm] = c - matched[:, None]
    wt = np.ascontiguousarray(w.T)
    v = np.zeros(n)
    for _ in range(n):
        nv = np.minimum(v, (wt + v[None, :]).min(axis=1))
        if np.array_equal(nv, v):
            break
        v = nv
    u = matched - v[perm]
    return u, v


def _tie_tolerance(c: np.ndarray) -> float:
    n = c.shape[0]
    return 64.0 * n * np.finfo(float).eps * (1.0 + float(np.abs(c).max()))


def _lexicographic_optimum(c: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Rotate ``perm`` along zero-cost alternating cycles until lexicographically minimal."""
    n = c.shape[0]
    if n == 1:
        return perm
    u, v = assignment_duals(c, perm)
    tight = (c - u[:, None] - v[None, :]) <= _tie_tolerance(c)
    tight[np.arange(n), perm] = True
    if not np.any(tight.sum(axis=1) > 1):
        return perm

    perm = perm.copy()
    rowof = np.empty(n, dtype=np.int64)
    rowof[perm] = np.arange(n)
    for i in range(n - 1):
        # free rows are i+1..n-1; their columns are the free columns
        cands = np.flatnonzero(tight[i, :perm[i]])
        cands = cands[rowof[cands] > i]
        if cands.size == 0:
            continue
        # backward search: which columns can reach perm[i] along an
        # alternating path col -> (matched row) -> tight col -> ...
        nxt = {int(perm[i]): -1}
        seen_rows = np.zeros(n, dtype=bool)
        seen_rows[: i + 1] = True
        frontier = np.array([perm[i]])
        while frontier.size:
            hit = tight[:, frontier]
            rows = np.flatnonzero(hit.any(axis=1) & ~seen_rows)
            seen_rows[rows] = True
            new = []
            for r in rows:
                col = int(perm[r])
                if col not in nxt:
                    nxt[col] = int(frontier[np.argmax(hit[r])])
                    new.append(col)
            frontier = np.array(new, dtype=np.int64)
        for j in cands:
            j = int(j)
            if j not in nxt or j == perm[i]:
                continue
            old, new = [(i, int(perm[i]))], [(i, j)]
            col = j
            while col != perm[i]:
                r = int(rowof[col])
                old.append((r, col))
                new.append((r, nxt[col]))
                col = nxt[col]
            if math.fsum(c[a, b] for a, b in new) > math.fsum(c[a, b] for a, b in old):
                continue
            for r, col in new:
                perm[r] = col
                rowof[col] = r
            break
    return perm


def solve_assignment(cost) -> Assignment:
    """Exact minimum-cost perfect matching of a square cost matrix.

    Ties between optimal bijections are broken towards the
    lexicographically smallest permutation.
    """
    if not isinstance(cost, CostMatrix):
        cost = CostMatrix(cost)
    c = cost.entries
    _, perm = linear_sum_assignment(c)
    perm = _lexicographic_optimum(c, np.asarray(perm, dtype=np.int64))
    total = math.fsum(c[np.arange(cost.n), perm])
    perm.setflags(write=False)
    return Assignment(perm, total)


def pair_samples(ds0, ds1) -> PairedSamples:
    """Solve the discrete Monge problem and reorder ``ds1`` to match ``ds0`` row by row."""
    ds0, ds1 = as_dataset(ds0), as_dataset(ds1)
    sol = solve_assignment(build_cost_matrix(ds0, ds1))
    return PairedSamples(ds0, ds1.take(sol.permutation), sol.total_cost, sol.permutation)
