"""Independent reference computations used by the unit and acceptance tests."""

import itertools
import math

import numpy as np


def brute_force_assignment(c):
    """Minimum cost and lexicographically first optimal permutation, by enumeration."""
    n = c.shape[0]
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n)):
        cost = math.fsum(c[i, perm[i]] for i in range(n))
        if cost < best:
            best, best_perm = cost, perm
    return best, list(best_perm)


def enumerate_min_cycle_mean(w):
    """Minimum mean over all simple directed cycles, by enumeration."""
    n = w.shape[0]
    best = np.inf
    for k in range(2, n + 1):
        for nodes in itertools.combinations(range(n), k):
            head, rest = nodes[0], nodes[1:]
            for order in itertools.permutations(rest):
                cyc = (head,) + order
                total = math.fsum(w[a, b] for a, b in zip(cyc, cyc[1:] + cyc[:1]))
                best = min(best, total / k)
    return best


def _prox_objective(targets, psi, lam, x, z):
    # z: (m, d) candidate points
    return (z @ targets.T - psi).max(axis=1) + np.sum((z - x) ** 2, axis=1) / (2 * lam)


def _grid(lo, hi, step):
    axes = [np.arange(a, b + step / 2, step) for a, b in zip(lo, hi)]
    return np.array(list(itertools.product(*axes)))


def grid_prox(targets, psi, lam, x, coarse=1e-4, fine=1e-6, refine_cells=3):
    """Proximal point by exhaustive grid search, then a local refinement grid.

    The minimiser lies in ``x - lam * hull(targets)``, so the coarse grid
    covers that box; the fine grid spans ``refine_cells`` coarse cells
    around the coarse winner.
    """
    x = np.asarray(x, dtype=float)
    lo = x - lam * targets.max(axis=0) - coarse
    hi = x - lam * targets.min(axis=0) + coarse
    pts = _grid(lo, hi, coarse)
    vals = np.concatenate([_prox_objective(targets, psi, lam, x, c) for c in np.array_split(pts, max(1, len(pts) // 200000))])
    best = pts[np.argmin(vals)]
    half = refine_cells * coarse
    pts = _grid(best - half, best + half, fine)
    vals = np.concatenate([_prox_objective(targets, psi, lam, x, c) for c in np.array_split(pts, max(1, len(pts) // 200000))])
    return pts[np.argmin(vals)]
