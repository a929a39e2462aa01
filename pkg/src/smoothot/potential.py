"""Strict-convexity margin and conjugate potentials of a cyclically monotone pairing.

Solves

    max eps0  s.t.  <x0_i, x1_i - x1_j> >= psi_i - psi_j + 2 eps0,  i != j

through the minimum-mean-cycle identity ``2 eps0 = mu*`` of the complete
digraph with weights ``w(i, j) = <x0_i, x1_i - x1_j>``: the constraints
are feasible for a given eps0 exactly when the reduced weights
``w - 2 eps0`` carry no negative cycle, and shortest-path distances on the
reduced graph then provide ``psi``.  A minimum-mean cycle is an optimal
basic solution of the dual circulation LP, so the dual is not solved
separately.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import PairedSamples
from .errors import DegenerateSampleError, NegativeCycleError, ValidationError

__all__ = [
    "CostGraph",
    "PotentialSolution",
    "build_cost_graph",
    "min_cycle_mean",
    "min_mean_cycle",
    "recover_potentials",
    "fit_potential",
    "feasibility_tolerance",
]

log = logging.getLogger(__name__)

#: relative scale of the feasibility tolerance, ``feas_tol = FEAS_REL * (1 + max|w|)``
FEAS_REL = 1e-9
#: relative shrink applied to eps0 when Bellman-Ford trips on rounding noise
SHRINK_REL = 1e-12
MAX_RETRIES = 60


@dataclass(frozen=True)
class CostGraph:
    """Complete digraph on ``n`` nodes; ``weights[i, j]`` is the weight of edge ``i -> j``.

    The diagonal is ``+inf`` (no self-loops).
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError(f"weight matrix must be square, got {w.shape}")
        if w.shape[0] < 2:
            raise ValidationError("cost graph needs at least 2 nodes")
        np.fill_diagonal(w, np.inf)
        off = ~np.eye(w.shape[0], dtype=bool)
        if not np.all(np.isfinite(w[off])):
            raise ValidationError("cost graph has non-finite edge weights")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def weight(self, i, j) -> float:
        return float(self.weights[i, j])

    def max_abs_weight(self) -> float:
        off = ~np.eye(self.n, dtype=bool)
        return float(np.abs(self.weights[off]).max())

    def cycle_weight(self, cycle) -> float:
        c = list(cycle)
        return math.fsum(self.weights[a, b] for a, b in zip(c, c[1:] + c[:1]))

    def cycle_mean(self, cycle) -> float:
        return self.cycle_weight(cycle) / len(cycle)

    def reweighted(self, potential) -> "CostGraph":
        """Graph with weights ``w(i, j) - p_i + p_j``; every cycle keeps its weight."""
        p = np.asarray(potential, dtype=np.float64)
        return CostGraph(self.weights - p[:, None] + p[None, :])


@dataclass(frozen=True)
class PotentialSolution:
    eps0: float
    psi: np.ndarray
    feas_tol: float
    #: largest value of ``psi_i - psi_j + 2 eps0 - w(i, j)`` over i != j
    max_violation: float


def feasibility_tolerance(graph: CostGraph) -> float:
    return FEAS_REL * (1.0 + graph.max_abs_weight())


def build_cost_graph(paired: PairedSamples) -> CostGraph:
    """Weights ``w(i, j) = <source_i, target_i - target_j>``, accumulated coordinate by coordinate."""
    if paired.n < 2:
        raise ValidationError("need at least 2 paired points: with n=1 the LP has no constraints")
    x, y = paired.source.points, paired.target.points
    w = np.zeros((paired.n, paired.n))
    for k in range(paired.d):
        w += x[:, k, None] * (y[:, k, None] - y[None, :, k])
    return CostGraph(w)


def _simple_cycles_of_walk(walk):
    """Split a closed-or-open node walk into the simple cycles it traverses."""
    stack, pos, cycles = [], {}, []
    for v in walk:
        if v in pos:
            k = pos[v]
            cyc = stack[k:]
            cycles.append(list(cyc))
            for u in cyc[1:]:
                del pos[u]
            del stack[k + 1:]
        else:
            pos[v] = len(stack)
            stack.append(v)
    return cycles


def min_mean_cycle(graph: CostGraph):
    """Minimum cycle mean and one cycle attaining it (Karp, O(n^3)).

    Uses ``mu* = min_v max_k (D_n(v) - D_k(v)) / (n - k)`` with ``D_k(v)``
    the minimum weight of a ``k``-edge walk from node 0.  Every cycle on the
    critical ``n``-edge walk is a minimum-mean cycle; the returned value is
    the exactly summed mean of the best such cycle.
    """
    n = graph.n
    wt = np.ascontiguousarray(graph.weights.T)
    dk = np.full((n + 1, n), np.inf)
    dk[0, 0] = 0.0
    parent = np.zeros((n + 1, n), dtype=np.int32)
    buf = np.empty((n, n))
    ar = np.arange(n)
    for k in range(1, n + 1):
        np.add(wt, dk[k - 1][None, :], out=buf)
        idx = buf.argmin(axis=1)
        parent[k] = idx
        dk[k] = buf[ar, idx]
    with np.errstate(invalid="ignore"):
        ratios = (dk[n][None, :] - dk[:n]) / (n - ar)[:, None]
    ratios[~np.isfinite(dk[:n])] = -np.inf
    per_node = ratios.max(axis=0)
    v = int(np.argmin(per_node))
    karp_value = float(per_node[v])

    walk = [v]
    for k in range(n, 0, -1):
        walk.append(int(parent[k][walk[-1]]))
    walk.reverse()
    cycles = _simple_cycles_of_walk(walk)
    if not cycles:
        return karp_value, []
    means = [graph.cycle_mean(c) for c in cycles]
    best = int(np.argmin(means))
    return means[best], cycles[best]


def min_cycle_mean(graph: CostGraph) -> float:
    """Minimum over directed cycles of (cycle weight / cycle length)."""
    return min_mean_cycle(graph)[0]


def _pred_cycle(pred, start):
    """Cycle reachable from ``start`` in a predecessor forest, or None."""
    seen = {}
    v, step = start, 0
    while v >= 0 and v not in seen:
        seen[v] = step
        v = int(pred[v])
        step += 1
    if v < 0:
        return None
    cyc = [v]
    u = int(pred[v])
    while u != v:
        cyc.append(u)
        u = int(pred[u])
    return cyc[::-1]


def _find_pred_cycle(pred, candidates):
    for s in candidates:
        cyc = _pred_cycle(pred, int(s))
        if cyc is not None:
            return cyc
    return None


def recover_potentials(graph: CostGraph, eps0: float, check_every: int = 16) -> np.ndarray:
    """Shortest-path potentials of the reduced graph ``w - 2 eps0``.

    Bellman-Ford from a virtual source joined to every node by a zero-weight
    edge; ``psi_i = -dist(i)``, shifted so that ``psi_0 = 0``.  Then
    ``psi_i - psi_j <= w(i, j) - 2 eps0`` for all i != j.

    Raises
    ------
    NegativeCycleError
        When the reduced graph has a negative cycle, i.e. ``eps0`` exceeds
        half the minimum cycle mean (or sits on it within rounding).
    """
    n = graph.n
    red_t = np.ascontiguousarray(graph.weights.T) - 2.0 * eps0
    dist = np.zeros(n)
    pred = np.full(n, -1, dtype=np.int64)
    buf = np.empty((n, n))
    ar = np.arange(n)
    for rnd in range(1, n + 1):
        np.add(red_t, dist[None, :], out=buf)
        idx = buf.argmin(axis=1)
        cand = buf[ar, idx]
        upd = cand < dist
        if not upd.any():
            psi = -dist
            return psi - psi[0]
        dist = np.where(upd, cand, dist)
        pred[upd] = idx[upd]
        if rnd % check_every == 0:
            cyc = _find_pred_cycle(pred, np.flatnonzero(upd))
            if cyc is not None:
                raise NegativeCycleError(cyc)
    cyc = _find_pred_cycle(pred, range(n))
    raise NegativeCycleError(cyc or [], "reduced graph still relaxing after n rounds")


def _check_constraints(graph, eps0, psi):
    viol = psi[:, None] - psi[None, :] + 2.0 * eps0 - graph.weights
    np.fill_diagonal(viol, -np.inf)
    return float(viol.max())


def fit_potential(paired: PairedSamples) -> PotentialSolution:
    """Maximal margin ``eps0`` and potentials ``psi`` (``psi_0 = 0``) of a paired sample.

    Raises
    ------
    DegenerateSampleError
        If ``eps0 <= feas_tol``: some cycle of the cost graph has (numerically)
        zero mean, as happens with duplicated points.
    """
    graph = build_cost_graph(paired)
    feas_tol = feasibility_tolerance(graph)

    # Karp on the raw weights loses the (tiny) cycle means to cancellation in
    # walk sums of size ~ n max|w|; a zero-margin potential makes every edge
    # weight small and nonnegative without changing any cycle weight.
    try:
        base = recover_potentials(graph, 0.0)
    except NegativeCycleError as exc:
        if exc.cycle and graph.cycle_mean(exc.cycle) <= feas_tol:
            raise DegenerateSampleError(graph.cycle_mean(exc.cycle) / 2.0, feas_tol) from None
        raise
    mu, cycle = min_mean_cycle(graph.reweighted(base))
    if cycle:
        mu = graph.cycle_mean(cycle)
    if mu / 2.0 <= feas_tol:
        raise DegenerateSampleError(mu / 2.0, feas_tol)

    eps0 = mu / 2.0
    for attempt in range(MAX_RETRIES):
        try:
            psi = recover_potentials(graph, eps0)
        except NegativeCycleError as exc:
            found = graph.cycle_mean(exc.cycle) / 2.0 if exc.cycle else math.inf
            shrunk = eps0 - SHRINK_REL * (1.0 + abs(eps0))
            log.debug("negative cycle at eps0=%r (cycle eps=%r), retrying", eps0, found)
            eps0 = min(found, shrunk)
            if eps0 <= feas_tol:
                raise DegenerateSampleError(eps0, feas_tol) from None
            continue
        worst = _check_constraints(graph, eps0, psi)
        if worst <= feas_tol:
            psi.setflags(write=False)
            return PotentialSolution(float(eps0), psi, feas_tol, worst)
        eps0 -= SHRINK_REL * (1.0 + abs(eps0))
    raise NegativeCycleError([], f"could not find feasible potentials after {MAX_RETRIES} retries")
