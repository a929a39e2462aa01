"""Continuous, cyclically monotone interpolation of a discrete transport map.

The fitted map is the gradient of the Moreau envelope of the max-of-affine
potential

    phi(x) = max_i <x, y_i> - psi_i

whose slopes are the target points ``y_i``.  Evaluating it at ``x`` means
solving the proximal problem

    min_z  phi(z) + ||z - x||^2 / (2 lam)

and returning ``(x - z*) / lam``.  The proximal point is computed through
its dual, a quadratic program over the simplex,

    min_w  (lam / 2) ||Y^T w||^2 - <x, Y^T w> + <psi, w>,

whose solution ``w*`` gives both ``z* = x - lam Y^T w*`` and the map value
``Y^T w*`` as an explicit convex combination of targets.  With
``a_i(z) = <z, y_i> - psi_i``, the primal-dual gap of any simplex vector is
``sum_i w_i (max_j a_j(z) - a_i(z))`` at ``z = x - lam Y^T w``; this is the
certificate checked before a result is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .assignment import pair_samples
from .core import Dataset, align_groups, as_dataset
from .errors import DimensionMismatchError, ProxError, ValidationError
from .potential import build_cost_graph, fit_potential

__all__ = [
    "FittedMap",
    "ProxResult",
    "smoothing_parameter",
    "tilde_phi",
    "prox",
    "eval_map",
    "transform",
    "fit",
    "moreau_envelope",
    "DEFAULT_MAP_TOL",
    "DEFAULT_MAX_ITER",
]

DEFAULT_MAP_TOL = 1e-6
DEFAULT_MAX_ITER = 10**6
_U = np.finfo(float).eps / 2


@dataclass(frozen=True)
class FittedMap:
    """Everything needed to evaluate the interpolated map.

    ``eps0`` and ``psi`` solve the margin LP; ``smoothing`` is the Moreau
    parameter actually used, ``min(eps0, lam_max / 2)`` where ``lam_max`` is
    the largest parameter keeping every source point inside its own cell
    (see :func:`smoothing_parameter`).
    """

    sources: np.ndarray
    targets: np.ndarray
    psi: np.ndarray
    eps0: float
    smoothing: float
    map_tol: float = DEFAULT_MAP_TOL
    prox_tol: float | None = None
    max_iter: int = DEFAULT_MAX_ITER
    meta: dict = field(default_factory=dict, compare=False)
    _exact: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("sources", "targets", "psi"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.targets.ndim != 2 or self.sources.shape != self.targets.shape:
            raise ValidationError("sources and targets must be (n, d) arrays of equal shape")
        if self.psi.shape != (self.n,):
            raise ValidationError("psi must have one entry per target")
        if self.n < 2:
            raise ValidationError("a fitted map needs n >= 2")
        if not (self.eps0 > 0 and self.smoothing > 0):
            raise ValidationError("eps0 and smoothing must be positive")
        object.__setattr__(self, "_abs_targets", np.abs(self.targets))

    @property
    def n(self) -> int:
        return self.targets.shape[0]

    @property
    def d(self) -> int:
        return self.targets.shape[1]

    def default_tol_g(self, map_tol=None) -> float:
        """Gap ensuring map-space error ``<= map_tol`` by strong convexity."""
        if map_tol is None and self.prox_tol is not None:
            return self.prox_tol
        t = self.map_tol if map_tol is None else map_tol
        return self.smoothing * t * t / 2.0

    def _exact_row(self, j):
        row = self._exact.get(j)
        if row is None:
            row = (tuple(Fraction(float(c)) for c in self.targets[j]), Fraction(float(self.psi[j])))
            self._exact[j] = row
        return row


@dataclass(frozen=True)
class ProxResult:
    """Proximal point with its convex-combination certificate.

    ``weights`` is a simplex vector ``w`` with ``(x - z) / lam = Y^T w``
    (exactly for the rational point behind ``z``, up to rounding for the
    stored float ``z``); ``gap_bound`` bounds the primal-dual gap of ``w``,
    so ``||z - z*|| <= sqrt(2 lam gap_bound)``.
    """

    z: np.ndarray
    weights: np.ndarray
    gap_bound: float
    support: tuple
    value: np.ndarray
    exact: bool = False
    iterations: int = 0


# ---------------------------------------------------------------------------
# evaluation of the max-of-affine potential


def _check_point(fmap: FittedMap, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != fmap.d:
        raise DimensionMismatchError(f"point has dimension {x.shape[0]}, map expects {fmap.d}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("point has non-finite coordinates")
    return x


def tilde_phi(fmap: FittedMap, x):
    """Value of ``max_i <x, y_i> - psi_i`` and the indices attaining it.

    Ties are resolved with ``arg_tol = 1e-12 * (1 + |value|)``.
    """
    x = _check_point(fmap, x)
    vals = fmap.targets @ x - fmap.psi
    top = float(vals.max())
    tol = 1e-12 * (1.0 + abs(top))
    return top, frozenset(int(i) for i in np.flatnonzero(vals >= top - tol))


def moreau_envelope(fmap: FittedMap, x, z=None) -> float:
    """``phi(z) + ||z - x||^2 / (2 lam)`` at ``z`` (the proximal point when omitted)."""
    x = _check_point(fmap, x)
    if z is None:
        z = prox(fmap, x).z
    z = np.asarray(z, dtype=np.float64)
    return float((fmap.targets @ z - fmap.psi).max() + np.sum((z - x) ** 2) / (2.0 * fmap.smoothing))


def smoothing_parameter(sources, targets, psi, eps0) -> float:
    """Moreau parameter ``min(eps0, lam_max / 2)``.

    Source ``x_i`` is sent to ``y_i`` iff ``z_i = x_i - lam y_i`` stays in
    the cell of index ``i``, i.e. ``slack_ij >= lam <y_i, y_i - y_j>`` for
    all ``j`` with ``slack_ij = <x_i, y_i - y_j> - psi_i + psi_j``.  ``lam_max``
    is the largest such ``lam``; halving it keeps half of every slack as
    margin.
    """
    x = np.asarray(sources, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    n, d = y.shape
    slack = np.zeros((n, n))
    q = np.zeros((n, n))
    for k in range(d):
        dy = y[:, k, None] - y[None, :, k]
        slack += x[:, k, None] * dy
        q += y[:, k, None] * dy
    slack -= psi[:, None] - psi[None, :]
    off = ~np.eye(n, dtype=bool)
    pos = off & (q > 0)
    if not pos.any():
        return float(eps0)
    lam_max = float((slack[pos] / q[pos]).min())
    return float(min(eps0, lam_max / 2.0))


# ---------------------------------------------------------------------------
# float active-set solver on the simplex


def _affine_step_float(ys, bs, lam):
    """Minimiser over the affine hull of the support, or a descent ray if unbounded.

    Returns ``(beta, is_ray)``; a ray ``beta`` sums to zero and leaves
    ``Y^T w`` unchanged.
    """
    m = ys.shape[0]
    if m == 1:
        return np.ones(1), False
    dm = ys[1:] - ys[0]
    u, s, _ = np.linalg.svd(dm, full_matrices=True)
    rank = int(np.sum(s > s[0] * 1e-11)) if s.size and s[0] > 0 else 0
    if rank < m - 1:
        t = u[:, -1]
        return np.concatenate([[-t.sum()], t]), True
    h = lam * (dm @ dm.T)
    r = (bs[1:] - bs[0]) - lam * (dm @ ys[0])
    t = np.linalg.solve(h, r)
    return np.concatenate([[1.0 - t.sum()], t]), False


def _minor_cycles_float(ys, bs, lam, w, max_steps):
    """Wolfe minor cycles: move to the affine minimiser, dropping indices that hit zero."""
    keep = np.arange(ys.shape[0])
    for _ in range(max_steps):
        beta, ray = _affine_step_float(ys[keep], bs[keep], lam)
        cur = w[keep]
        if ray:
            a = bs[keep] - lam * (ys[keep] @ (cur @ ys[keep]))
            if a @ beta < 0:
                beta = -beta
            neg = beta < 0
            theta = float(np.min(cur[neg] / -beta[neg]))
            new = cur + theta * beta
        else:
            if beta.min() > 0:
                w[keep] = beta
                return keep, w
            neg = beta <= 0
            theta = float(np.min(cur[neg] / (cur[neg] - beta[neg])))
            new = cur + theta * (beta - cur)
        drop = int(np.flatnonzero(neg)[np.argmin(np.where(neg, new, np.inf)[neg])])
        new[drop] = 0.0
        new = np.maximum(new, 0.0)
        w[keep] = new
        keep = keep[new > 0]
        w[keep] /= w[keep].sum()
        if keep.size == 1:
            w[keep] = 1.0
            return keep, w
    return keep, w


def _active_set_float(fmap, x, b, max_iter):
    y, lam = fmap.targets, fmap.smoothing
    support = [int(np.argmax(b))]
    w = np.ones(1)
    scale = 1.0 + float(np.abs(b).max())
    it = 0
    last_added = None
    while it < max_iter:
        it += 1
        v = w @ y[support]
        a = b - lam * (y @ v)
        j = int(np.argmax(a))
        gap = float(a[j] - w @ a[support])
        if gap <= 1e-15 * scale or j in support:
            break
        if j == last_added:
            break
        last_added = j
        support.append(j)
        w = np.append(w, 0.0)
        ys, bs = y[support], b[support]
        keep, w = _minor_cycles_float(ys, bs, lam, w, max_steps=4 * len(support) + 8)
        support = [support[k] for k in keep]
        w = w[keep]
    return support, w, it


# ---------------------------------------------------------------------------
# certificates


def _screen(fmap, zf, a_f):
    """Rigorous bound on ``|fl(a_j(zf)) - a_j(z)|`` for ``z`` within rounding of ``zf``."""
    d = fmap.d
    return 2.0 * (d + 4) * _U * (fmap._abs_targets @ np.abs(zf) + np.abs(fmap.psi))


def _float_certificate(fmap, x, support, w):
    """Upper bound on the primal-dual gap of the (normalised) float weights, or inf."""
    y, psi, lam = fmap.targets, fmap.psi, fmap.smoothing
    ys = y[support]
    v = w @ ys
    zf = x - lam * v
    a_f = y @ zf - psi
    err = _screen(fmap, zf, a_f)
    # drift of zf from the exact point x - lam Y^T (w / sum w)
    m = len(support)
    dz = 2.0 * (m + 4) * _U * (np.abs(x) + lam * (w @ np.abs(ys)))
    dz += lam * abs(1.0 - math.fsum(w)) * np.abs(ys).max(axis=0)
    err = err + fmap._abs_targets @ dz
    inside = np.zeros(fmap.n, dtype=bool)
    inside[support] = True
    lo = a_f[support] - err[support]
    hi_out = float(np.max(np.where(inside, -np.inf, a_f + err))) if m < fmap.n else -np.inf
    if m == 1:
        if hi_out <= lo[0]:
            return 0.0, zf, v
        gap = hi_out - lo[0]
    else:
        top = max(hi_out, float(np.max(a_f[support] + err[support])))
        gap = float(w @ (top - lo))
        gap += 4.0 * _U * float(w @ (abs(top) + np.abs(lo)))
    return max(gap, 0.0) * (1.0 + 1e-9) / math.fsum(w), zf, v


def _singleton_batch(fmap, xs):
    """Vectorised certification of single-piece proximal points; returns mask and indices."""
    y, psi, lam = fmap.targets, fmap.psi, fmap.smoothing
    b = xs @ y.T - psi
    k = np.argmax(b, axis=1)
    zf = xs - lam * y[k]
    a_f = zf @ y.T - psi
    err = 2.0 * (fmap.d + 4) * _U * (np.abs(zf) @ fmap._abs_targets.T + np.abs(psi)[None, :])
    dz = 4.0 * _U * (np.abs(xs) + lam * np.abs(y[k]))
    err = err + dz @ fmap._abs_targets.T
    rows = np.arange(xs.shape[0])
    lo = a_f[rows, k] - err[rows, k]
    hi = a_f + err
    hi[rows, k] = -np.inf
    ok = hi.max(axis=1) <= lo
    return ok, k, zf


# ---------------------------------------------------------------------------
# exact-arithmetic polish


def _solve_exact(mat, rhs):
    """Solve a small rational system; returns ``(solution, None)`` or ``(None, kernel)``."""
    m = len(mat)
    a = [list(row) + [r] for row, r in zip(mat, rhs)]
    piv_cols = []
    row = 0
    for col in range(m):
        p = next((r for r in range(row, m) if a[r][col] != 0), None)
        if p is None:
            continue
        a[row], a[p] = a[p], a[row]
        inv = 1 / a[row][col]
        a[row] = [e * inv for e in a[row]]
        for r in range(m):
            if r != row and a[r][col] != 0:
                f = a[r][col]
                a[r] = [e - f * g for e, g in zip(a[r], a[row])]
        piv_cols.append(col)
        row += 1
    if len(piv_cols) == m:
        return [a[i][m] for i in range(m)], None
    free = next(c for c in range(m) if c not in piv_cols)
    ker = [Fraction(0)] * m
    ker[free] = Fraction(1)
    for i, c in enumerate(piv_cols):
        ker[c] = -a[i][free]
    return None, ker


class _Exact:
    """Rational arithmetic on the support of a proximal problem."""

    def __init__(self, fmap, x):
        self.fmap = fmap
        self.x = tuple(Fraction(float(c)) for c in x)
        self.lam = Fraction(fmap.smoothing)
        self._b = {}

    def row(self, j):
        return self.fmap._exact_row(j)

    def b(self, j):
        v = self._b.get(j)
        if v is None:
            yj, pj = self.row(j)
            v = sum(xk * yk for xk, yk in zip(self.x, yj)) - pj
            self._b[j] = v
        return v

    def z(self, support, w):
        d = len(self.x)
        v = [sum(wi * self.row(i)[0][k] for wi, i in zip(w, support)) for k in range(d)]
        return [xk - self.lam * vk for xk, vk in zip(self.x, v)]

    def a(self, j, z):
        yj, pj = self.row(j)
        return sum(zk * yk for zk, yk in zip(z, yj)) - pj

    def affine_step(self, support):
        m = len(support)
        if m == 1:
            return [Fraction(1)], False
        ys = [self.row(i)[0] for i in support]
        d = len(self.x)
        dm = [[ys[r][k] - ys[0][k] for k in range(d)] for r in range(1, m)]
        h = [[self.lam * sum(p * q for p, q in zip(dr, ds)) for ds in dm] for dr in dm]
        rhs = [
            (self.b(support[r + 1]) - self.b(support[0])) - self.lam * sum(p * q for p, q in zip(dm[r], ys[0]))
            for r in range(m - 1)
        ]
        t, ker = _solve_exact(h, rhs)
        if t is not None:
            return [1 - sum(t)] + t, False
        return [-sum(ker)] + ker, True

    def minor_cycles(self, support, w, max_steps):
        for _ in range(max_steps):
            beta, ray = self.affine_step(support)
            if ray:
                z = self.z(support, w)
                slope = sum(self.a(i, z) * bi for i, bi in zip(support, beta))
                if slope < 0:
                    beta = [-e for e in beta]
                theta = min(wi / -bi for wi, bi in zip(w, beta) if bi < 0)
                new = [wi + theta * bi for wi, bi in zip(w, beta)]
            else:
                if all(e > 0 for e in beta):
                    return support, beta
                theta = min(wi / (wi - bi) for wi, bi in zip(w, beta) if bi <= 0)
                new = [wi + theta * (bi - wi) for wi, bi in zip(w, beta)]
            keep = [k for k, e in enumerate(new) if e > 0]
            support = [support[k] for k in keep]
            w = [new[k] for k in keep]
            if len(support) == 1:
                return support, [Fraction(1)]
        return support, w


def _exact_candidates(fmap, ex, z, level):
    """Indices whose exact ``a_j(z)`` may reach ``level`` (all others are certified below)."""
    zf = np.array([float(c) for c in z])
    a_f = fmap.targets @ zf - fmap.psi
    err = _screen(fmap, zf, a_f) + 2.0 * _U * (fmap._abs_targets @ np.abs(zf))
    lv = float(level)
    lv -= 4.0 * _U * abs(lv)
    return np.flatnonzero(a_f + err >= lv), zf


def _exact_polish(fmap, x, support, w_float, max_iter):
    ex = _Exact(fmap, x)
    w = [Fraction(float(e)) for e in w_float]
    s = sum(w)
    w = [e / s for e in w]
    support = list(support)
    it = 0
    while True:
        it += 1
        support, w = ex.minor_cycles(support, w, max_steps=4 * len(support) + 8)
        z = ex.z(support, w)
        top_s = max(ex.a(i, z) for i in support)
        cands, _ = _exact_candidates(fmap, ex, z, top_s)
        best_j, best = None, top_s
        for j in cands:
            j = int(j)
            if j in support:
                continue
            aj = ex.a(j, z)
            if aj > best:
                best_j, best = j, aj
        if best_j is None or it >= max_iter:
            break
        support.append(best_j)
        w.append(Fraction(0))
        # rounding the iterate keeps rational sizes bounded between major steps
        wf = [Fraction(float(e)) for e in w]
        s = sum(wf)
        w = [e / s for e in wf] if s > 0 else w

    # certificate for the float weights actually reported
    wf = [float(e) for e in w]
    keep = [k for k, e in enumerate(wf) if e > 0]
    support = [support[k] for k in keep]
    wr = [Fraction(wf[k]) for k in keep]
    s = sum(wr)
    wr = [e / s for e in wr]
    z = ex.z(support, wr)
    a_s = [ex.a(i, z) for i in support]
    top = max(a_s)
    cands, zf = _exact_candidates(fmap, ex, z, top)
    for j in cands:
        j = int(j)
        if j not in support:
            top = max(top, ex.a(j, z))
    gap = sum(wi * (top - ai) for wi, ai in zip(wr, a_s))
    gap_f = math.nextafter(float(gap), math.inf) if gap > 0 else 0.0
    return support, np.array([float(e) for e in wr]), zf, gap_f, it


# ---------------------------------------------------------------------------
# public operations


def _result(fmap, support, w, zf, gap, exact, it):
    weights = np.zeros(fmap.n)
    weights[list(support)] = w
    value = weights @ fmap.targets
    return ProxResult(zf, weights, gap, tuple(int(i) for i in support), value, exact, it)


def prox(fmap: FittedMap, x, tol_g=None, max_iter=None) -> ProxResult:
    """Certified proximal point of ``lam * phi`` at ``x``.

    The returned weights have primal-dual gap at most ``tol_g`` (default
    ``lam * map_tol^2 / 2``).  A float active-set pass finds the support;
    when rounding prevents certifying the gap in floating point (small
    ``lam``), the support system is re-solved in exact rational arithmetic.

    Raises
    ------
    ProxError
        If the gap cannot be certified within ``max_iter`` major iterations.
    """
    x = _check_point(fmap, x)
    if tol_g is None:
        tol_g = fmap.default_tol_g()
    if not tol_g > 0:
        raise ValidationError("tol_g must be positive")
    max_iter = fmap.max_iter if max_iter is None else max_iter
    b = fmap.targets @ x - fmap.psi
    support, w, it = _active_set_float(fmap, x, b, max_iter)
    gap, zf, _ = _float_certificate(fmap, x, support, w)
    if gap <= tol_g:
        return _result(fmap, support, w / w.sum(), zf, gap, False, it)
    support, w, zf, gap, it2 = _exact_polish(fmap, x, support, w, max_iter)
    if gap <= tol_g:
        return _result(fmap, support, w, zf, gap, True, it + it2)
    raise ProxError(
        f"could not certify prox gap {tol_g!r} (best {gap!r}) within {max_iter} iterations",
        best_gap=gap,
    )


def eval_map(fmap: FittedMap, x, map_tol=None, tol_g=None) -> np.ndarray:
    """Map value ``(x - prox(x)) / lam``, returned as the certified combination ``Y^T w``."""
    if tol_g is None:
        tol_g = fmap.default_tol_g(map_tol)
    return prox(fmap, x, tol_g=tol_g).value


def transform(fmap: FittedMap, ds, map_tol=None, tol_g=None, chunk=512) -> Dataset:
    """Evaluate the map on every row of ``ds``; row order is preserved.

    Raises
    ------
    ProxError
        Listing every row index whose proximal problem failed.
    """
    ds = as_dataset(ds)
    if ds.d != fmap.d:
        raise DimensionMismatchError(f"data has dimension {ds.d}, map expects {fmap.d}")
    if tol_g is None:
        tol_g = fmap.default_tol_g(map_tol)
    xs = ds.points
    out = np.empty_like(xs)
    failed = []
    for start in range(0, ds.n, chunk):
        block = xs[start:start + chunk]
        ok, k, _ = _singleton_batch(fmap, block)
        out[start:start + chunk][ok] = fmap.targets[k[ok]]
        for r in np.flatnonzero(~ok):
            try:
                out[start + r] = prox(fmap, block[r], tol_g=tol_g).value
            except ProxError:
                failed.append(start + int(r))
    if failed:
        raise ProxError(f"prox failed on {len(failed)} rows: {failed[:20]}", rows=failed)
    return Dataset(out)


def fit(ds0, ds1, seed=0, map_tol=DEFAULT_MAP_TOL, prox_tol=None, max_iter=DEFAULT_MAX_ITER) -> FittedMap:
    """Align, pair, solve the margin LP and assemble the interpolated map from ``ds0`` to ``ds1``.

    Raises
    ------
    DegenerateSampleError
        When the samples contain duplicated or non-generic points.
    """
    ds0, ds1 = as_dataset(ds0), as_dataset(ds1)
    n0, n1 = ds0.n, ds1.n
    a0, a1 = align_groups(ds0, ds1, seed)
    paired = pair_samples(a0, a1)
    pot = fit_potential(paired)
    lam = smoothing_parameter(paired.source.points, paired.target.points, pot.psi, pot.eps0)
    meta = {
        "seed": int(seed),
        "n0": n0,
        "n1": n1,
        "n": paired.n,
        "d": paired.d,
        "assignment_cost": paired.cost,
        "feas_tol": pot.feas_tol,
        "max_violation": pot.max_violation,
    }
    return FittedMap(
        sources=paired.source.points,
        targets=paired.target.points,
        psi=pot.psi,
        eps0=pot.eps0,
        smoothing=lam,
        map_tol=map_tol,
        prox_tol=prox_tol,
        max_iter=max_iter,
        meta=meta,
    )


def lp_slacks(fmap: FittedMap) -> np.ndarray:
    """``w(i, j) - psi_i + psi_j - 2 eps0`` for the stored pairing (``+inf`` on the diagonal)."""
    from .core import PairedSamples

    g = build_cost_graph(PairedSamples(Dataset(fmap.sources), Dataset(fmap.targets), 0.0))
    return g.weights - fmap.psi[:, None] + fmap.psi[None, :] - 2.0 * fmap.eps0
