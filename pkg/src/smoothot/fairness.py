"""Counterfactual auditing and barycentric repair of binary decision rules.

A transport map ``T`` from group 0 to group 1 pairs each group-0 individual
with a counterpart in group 1.  Points whose decision changes across that
pairing form the flip sets

    negative:  h(x, 0) = 0 and h(T(x), 1) = 1
    positive:  h(x, 0) = 1 and h(T(x), 1) = 0

and the audit compares how ``x - T(x)`` behaves on a flip set against the
whole group-0 sample.  All functions accept either a :class:`FittedMap` or
any callable mapping an ``(m, d)`` array to an ``(m, d)`` array, so the
same code runs with an exact closed-form map.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, GroupedDataset, as_dataset
from .errors import DimensionMismatchError, ValidationError
from .smooth_map import FittedMap, transform

__all__ = [
    "ClassifierSpec",
    "FlipSetPartition",
    "AuditOptions",
    "AuditReport",
    "DegeneracyWarning",
    "apply_map",
    "flip_sets",
    "transparency_report",
    "reference_vectors",
    "disparate_impact",
    "parity_gap_identity_check",
    "repair",
    "sign_degeneracy_check",
    "audit",
    "STARS",
]

log = logging.getLogger(__name__)

#: names of the two flip sets, in report order
STARS = ("negative", "positive")
SIGN_TOL = 1e-9


class DegeneracyWarning(UserWarning):
    """Many audited points have a coordinate left (numerically) unmoved by the map."""


def _labels(v, name):
    a = np.asarray(v)
    if a.ndim != 1:
        raise ValidationError(f"{name} must be a flat list of labels")
    if not np.all((a == 0) | (a == 1)):
        raise ValidationError(f"{name} must contain only 0/1 labels")
    return a.astype(np.int8)


@dataclass(frozen=True)
class ClassifierSpec:
    """Binary decision rule ``h(x, s)``.

    ``builtin-linear``: ``h(x, s) = 1`` iff ``<weights[s], x> + bias[s] > 0``.
    ``external-predictions``: labels produced elsewhere for the audited
    originals and their counterfactuals (and optionally for a group-1 sample).
    """

    mode: str
    weights: dict = field(default_factory=dict)
    bias: dict = field(default_factory=dict)
    labels_original: np.ndarray | None = None
    labels_counterfactual: np.ndarray | None = None
    labels_group1: np.ndarray | None = None

    def __post_init__(self):
        if self.mode == "builtin-linear":
            w = {int(s): np.asarray(self.weights[s], dtype=np.float64) for s in self.weights}
            b = {int(s): float(self.bias[s]) for s in self.bias}
            if set(w) != {0, 1} or set(b) != {0, 1}:
                raise ValidationError("builtin-linear classifier needs weights and bias for groups 0 and 1")
            if w[0].shape != w[1].shape or w[0].ndim != 1:
                raise ValidationError("per-group weight vectors must have equal length")
            object.__setattr__(self, "weights", w)
            object.__setattr__(self, "bias", b)
        elif self.mode == "external-predictions":
            for name in ("labels_original", "labels_counterfactual", "labels_group1"):
                v = getattr(self, name)
                if v is not None:
                    object.__setattr__(self, name, _labels(v, name))
        else:
            raise ValidationError(f"unknown classifier mode {self.mode!r}")

    @classmethod
    def linear(cls, w0, b0, w1=None, b1=None) -> "ClassifierSpec":
        """Linear rule; the group-1 parameters default to the group-0 ones."""
        w1 = w0 if w1 is None else w1
        b1 = b0 if b1 is None else b1
        return cls("builtin-linear", {0: w0, 1: w1}, {0: b0, 1: b1})

    @classmethod
    def external(cls, labels_original, labels_counterfactual, labels_group1=None) -> "ClassifierSpec":
        return cls(
            "external-predictions",
            labels_original=labels_original,
            labels_counterfactual=labels_counterfactual,
            labels_group1=labels_group1,
        )

    @property
    def d(self):
        return self.weights[0].shape[0] if self.mode == "builtin-linear" else None

    def predict(self, points, s: int) -> np.ndarray:
        """Decisions of the built-in rule for every row of ``points`` in group ``s``."""
        if self.mode != "builtin-linear":
            raise ValidationError("external-predictions classifiers cannot be evaluated in-process")
        x = np.asarray(points, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise DimensionMismatchError(f"classifier expects dimension {self.d}, got shape {x.shape}")
        return (x @ self.weights[s] + self.bias[s] > 0).astype(np.int8)


@dataclass(frozen=True)
class FlipSetPartition:
    """Partition of the audited group-0 rows by how their decision changes."""

    negative_idx: np.ndarray
    positive_idx: np.ndarray
    unflipped_idx: np.ndarray
    counterfactuals: np.ndarray
    h_original: np.ndarray
    h_counterfactual: np.ndarray

    @property
    def m(self) -> int:
        return self.h_original.shape[0]

    def indices(self, star: str) -> np.ndarray:
        return {"negative": self.negative_idx, "positive": self.positive_idx}[star]

    def masses(self) -> dict:
        return {star: self.indices(star).size / self.m for star in STARS}


def apply_map(tmap, ds) -> np.ndarray:
    """Evaluate a fitted map or a plain callable on every row of ``ds``."""
    ds = as_dataset(ds)
    if isinstance(tmap, FittedMap):
        return transform(tmap, ds).points
    out = np.asarray(tmap(ds.points), dtype=np.float64)
    if out.shape != ds.points.shape:
        raise DimensionMismatchError(f"map returned shape {out.shape} for input {ds.points.shape}")
    return out


def _partition(h0, h1, cf) -> FlipSetPartition:
    neg = np.flatnonzero((h0 == 0) & (h1 == 1))
    pos = np.flatnonzero((h0 == 1) & (h1 == 0))
    rest = np.flatnonzero(h0 == h1)
    return FlipSetPartition(neg, pos, rest, cf, h0, h1)


def flip_sets(tmap, clf: ClassifierSpec, ds0, counterfactuals=None) -> FlipSetPartition:
    """Flip sets of the group-0 sample ``ds0`` under map ``tmap`` and rule ``clf``.

    ``counterfactuals`` may be passed to reuse an earlier evaluation of the map.
    """
    ds0 = as_dataset(ds0)
    cf = apply_map(tmap, ds0) if counterfactuals is None else np.asarray(counterfactuals, dtype=np.float64)
    if cf.shape != ds0.points.shape:
        raise DimensionMismatchError("counterfactuals must match the audited sample shape")
    if clf.mode == "builtin-linear":
        h0 = clf.predict(ds0.points, 0)
        h1 = clf.predict(cf, 1)
    else:
        if clf.labels_original is None or clf.labels_counterfactual is None:
            raise ValidationError("external-predictions mode needs labels for originals and counterfactuals")
        h0, h1 = clf.labels_original, clf.labels_counterfactual
        if h0.shape[0] != ds0.n or h1.shape[0] != ds0.n:
            raise ValidationError(
                f"external label lists have lengths {h0.shape[0]} and {h1.shape[0]}, expected {ds0.n}"
            )
    return _partition(h0, h1, cf)


def _sign(diff, sign_tol):
    s = np.sign(diff)
    s[np.abs(diff) < sign_tol] = 0.0
    return s


def transparency_report(partition: FlipSetPartition, ds0, sign_tol=SIGN_TOL):
    """Mean difference and mean sign of ``x - T(x)`` over each flip set.

    Returns ``(diff, sign)``, two dicts keyed by ``"negative"``/``"positive"``;
    an empty flip set maps to ``None`` (undefined).
    """
    diff_all = as_dataset(ds0).points - partition.counterfactuals
    diff, sign = {}, {}
    for star in STARS:
        idx = partition.indices(star)
        if idx.size == 0:
            diff[star] = sign[star] = None
            continue
        sub = diff_all[idx]
        diff[star] = sub.mean(axis=0)
        sign[star] = _sign(sub, sign_tol).mean(axis=0)
    return diff, sign


def reference_vectors(tmap, ds0, sign_tol=SIGN_TOL, counterfactuals=None):
    """Mean difference and mean sign of ``x - T(x)`` over the whole group-0 sample."""
    ds0 = as_dataset(ds0)
    cf = apply_map(tmap, ds0) if counterfactuals is None else np.asarray(counterfactuals, dtype=np.float64)
    diff = ds0.points - cf
    return diff.mean(axis=0), _sign(diff, sign_tol).mean(axis=0)


def _rate(labels, name):
    a = _labels(labels, name)
    if a.size == 0:
        raise ValidationError(f"{name} is empty")
    return float(a.mean())


def disparate_impact(pred0, pred1) -> float:
    """``min(r0, r1) / max(r0, r1)`` of the favorable rates; 1 when both are 0."""
    r0, r1 = _rate(pred0, "group-0 predictions"), _rate(pred1, "group-1 predictions")
    hi = max(r0, r1)
    return 1.0 if hi == 0 else min(r0, r1) / hi


def parity_gap_identity_check(partition: FlipSetPartition, pred0=None, pred1=None):
    """Both sides of ``rate0 - rate1 = mass(positive) - mass(negative)``.

    ``lhs`` uses ``pred0`` (default: the partition's original labels) and
    ``pred1`` (default: the partition's counterfactual labels, the
    pushforward estimate of the group-1 rate).  With the defaults the two
    sides agree to rounding since they count the same indicators.
    """
    p0 = partition.h_original if pred0 is None else pred0
    p1 = partition.h_counterfactual if pred1 is None else pred1
    lhs = _rate(p0, "group-0 predictions") - _rate(p1, "group-1 predictions")
    mass = partition.masses()
    return lhs, mass["positive"] - mass["negative"]


def sign_degeneracy_check(tmap, ds0, sign_tol=SIGN_TOL, threshold=0.05, counterfactuals=None, warn=True):
    """Per-coordinate fraction of points with ``|(x - T(x))_k| < sign_tol``.

    Returns ``(fractions, flagged)``; ``flagged`` is True (and a
    :class:`DegeneracyWarning` is issued) when a fraction exceeds ``threshold``,
    in which case the mean sign vectors are unreliable.  With ``sign_tol = 0``
    only exact zeros are counted.
    """
    ds0 = as_dataset(ds0)
    cf = apply_map(tmap, ds0) if counterfactuals is None else np.asarray(counterfactuals, dtype=np.float64)
    diff = np.abs(ds0.points - cf)
    small = diff == 0 if sign_tol == 0 else diff < sign_tol
    frac = small.mean(axis=0)
    flagged = bool(np.any(frac > threshold))
    if flagged and warn:
        warnings.warn(
            f"coordinates {np.flatnonzero(frac > threshold).tolist()} are unmoved on more than "
            f"{threshold:.0%} of the audited points; mean sign vectors are unreliable",
            DegeneracyWarning,
            stacklevel=2,
        )
    return frac, flagged


def repair(map01, map10, data: GroupedDataset, w0=None) -> Dataset:
    """Move both groups to the weighted two-point barycenter.

    Group-0 rows become ``w0 x + w1 T01(x)``, group-1 rows ``w1 x + w0 T10(x)``
    with ``w1 = 1 - w0``; ``w0`` defaults to the group-0 proportion.
    """
    if not isinstance(data, GroupedDataset):
        raise ValidationError("repair needs a GroupedDataset")
    data.check_nondegenerate()
    d = data.features.d
    for name, mp in (("map01", map01), ("map10", map10)):
        if isinstance(mp, FittedMap) and mp.d != d:
            raise DimensionMismatchError(f"{name} has dimension {mp.d}, data has {d}")
    if w0 is None:
        w0 = float(np.mean(data.sensitive == 0))
    w0 = float(w0)
    if not 0.0 <= w0 <= 1.0:
        raise ValidationError(f"barycenter weight must lie in [0, 1], got {w0}")
    w1 = 1.0 - w0
    x = data.features.points
    out = np.array(x)
    for s, mp, keep, move in ((0, map01, w0, w1), (1, map10, w1, w0)):
        idx = np.flatnonzero(data.sensitive == s)
        if move == 0.0:
            continue
        out[idx] = keep * x[idx] + move * apply_map(mp, x[idx])
    return Dataset(out)


@dataclass(frozen=True)
class AuditOptions:
    sign_tol: float = SIGN_TOL
    #: deviations with sup-norm at most this are reported as "no insight"
    insight_tol: float = 0.1
    degeneracy_threshold: float = 0.05


def _vec(v):
    return None if v is None else [float(c) for c in v]


@dataclass(frozen=True)
class AuditReport:
    m: int
    flip_masses: dict
    delta_diff: dict
    delta_sign: dict
    ref_diff: np.ndarray
    ref_sign: np.ndarray
    deviations: dict
    insight: dict
    di: float
    parity_gap: float
    parity_identity: tuple
    group1_rate_source: str
    degeneracy: np.ndarray
    degeneracy_flagged: bool

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "flip_masses": dict(self.flip_masses),
            "delta_diff": {k: _vec(v) for k, v in self.delta_diff.items()},
            "delta_sign": {k: _vec(v) for k, v in self.delta_sign.items()},
            "ref_diff": _vec(self.ref_diff),
            "ref_sign": _vec(self.ref_sign),
            "deviations": {
                star: {kind: _vec(v) for kind, v in dev.items()} for star, dev in self.deviations.items()
            },
            "insight": dict(self.insight),
            "di": self.di,
            "parity_gap": self.parity_gap,
            "parity_identity": {"lhs": self.parity_identity[0], "rhs": self.parity_identity[1]},
            "group1_rate_source": self.group1_rate_source,
            "degeneracy": _vec(self.degeneracy),
            "degeneracy_flagged": self.degeneracy_flagged,
        }


def audit(tmap, clf: ClassifierSpec, data, options: AuditOptions | None = None, counterfactuals=None) -> AuditReport:
    """Full audit of ``clf`` on the group-0 rows of ``data`` under ``tmap`` (group 0 to group 1).

    ``data`` is a :class:`GroupedDataset`, or a plain group-0 sample when
    the classifier carries external labels.  The reported ``parity_gap`` and
    disparate impact use raw group-1 predictions when available (built-in
    rule on the group-1 rows, or ``labels_group1``) and otherwise the
    pushforward labels on the counterfactuals; ``group1_rate_source`` says
    which.
    """
    opts = options or AuditOptions()
    if isinstance(data, GroupedDataset):
        data.check_nondegenerate()
        ds0, ds1 = data.group(0), data.group(1)
    else:
        ds0, ds1 = as_dataset(data), None
    part = flip_sets(tmap, clf, ds0, counterfactuals)
    cf = part.counterfactuals
    diff, sign = transparency_report(part, ds0, opts.sign_tol)
    ref_diff, ref_sign = reference_vectors(tmap, ds0, opts.sign_tol, counterfactuals=cf)

    deviations, insight = {}, {}
    for star in STARS:
        if diff[star] is None:
            deviations[star] = {"diff": None, "sign": None}
            insight[star] = None
            continue
        dev = diff[star] - ref_diff
        deviations[star] = {"diff": dev, "sign": sign[star] - ref_sign}
        insight[star] = bool(np.max(np.abs(dev)) > opts.insight_tol)

    pred0 = part.h_original
    if clf.mode == "builtin-linear" and ds1 is not None:
        pred1, source = clf.predict(ds1.points, 1), "group1-sample"
    elif clf.mode == "external-predictions" and clf.labels_group1 is not None:
        pred1, source = clf.labels_group1, "group1-sample"
    else:
        pred1, source = part.h_counterfactual, "pushforward"
    di = disparate_impact(pred0, pred1)
    gap = float(pred0.mean() - np.mean(pred1))
    identity = parity_gap_identity_check(part)
    frac, flagged = sign_degeneracy_check(
        tmap, ds0, opts.sign_tol, opts.degeneracy_threshold, counterfactuals=cf
    )
    if flagged:
        log.warning("sign degeneracy above %.0f%% on coordinates %s", 100 * opts.degeneracy_threshold,
                    np.flatnonzero(frac > opts.degeneracy_threshold).tolist())
    return AuditReport(
        m=part.m,
        flip_masses=part.masses(),
        delta_diff=diff,
        delta_sign=sign,
        ref_diff=ref_diff,
        ref_sign=ref_sign,
        deviations=deviations,
        insight=insight,
        di=di,
        parity_gap=gap,
        parity_identity=identity,
        group1_rate_source=source,
        degeneracy=frac,
        degeneracy_flagged=flagged,
    )
