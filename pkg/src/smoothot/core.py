"""Domain types, dataset validation and group alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, ValidationError

__all__ = [
    "Dataset",
    "GroupedDataset",
    "PairedSamples",
    "validate_dataset",
    "align_groups",
    "as_dataset",
]


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """``n`` points in ``d`` dimensions, stored as a read-only ``(n, d)`` array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValidationError(f"points must be a 2-d array, got shape {pts.shape}")
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValidationError("dataset must contain at least one point of dimension >= 1")
        if not np.all(np.isfinite(pts)):
            i, k = np.argwhere(~np.isfinite(pts))[0]
            raise ValidationError(f"non-finite coordinate at row {i}, column {k}")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def take(self, idx) -> "Dataset":
        return Dataset(self.points[np.asarray(idx, dtype=np.int64)])


def validate_dataset(raw_points) -> Dataset:
    """Check a list of coordinate lists and wrap it as a :class:`Dataset`.

    Rows are kept in input order and values are not altered.

    Raises
    ------
    ValidationError
        On empty input, ragged rows or non-finite coordinates.
    """
    if isinstance(raw_points, Dataset):
        return raw_points
    if isinstance(raw_points, np.ndarray):
        rows = raw_points.tolist() if raw_points.ndim == 2 else None
        if rows is None:
            raise ValidationError(f"expected a 2-d array, got {raw_points.ndim}-d")
    else:
        rows = list(raw_points)
    if not rows:
        raise ValidationError("empty input: at least one point is required")
    d = None
    out = []
    for i, row in enumerate(rows):
        try:
            coords = [float(c) for c in row]
        except TypeError:
            raise ValidationError(f"row {i} is not a sequence of numbers") from None
        if d is None:
            d = len(coords)
            if d == 0:
                raise ValidationError("ragged row: row 0 has no coordinates")
        elif len(coords) != d:
            raise ValidationError(f"ragged row {i}: expected {d} coordinates, got {len(coords)}")
        for k, c in enumerate(coords):
            if not math.isfinite(c):
                raise ValidationError(f"non-finite coordinate at row {i}, column {k}: {c!r}")
        out.append(coords)
    return Dataset(np.array(out, dtype=np.float64))


def as_dataset(obj) -> Dataset:
    """Accept a :class:`Dataset`, an array or nested lists."""
    if isinstance(obj, Dataset):
        return obj
    return validate_dataset(obj)


@dataclass(frozen=True)
class GroupedDataset:
    """Features plus a binary sensitive attribute per row."""

    features: Dataset
    sensitive: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sensitive)
        if s.ndim != 1 or s.shape[0] != self.features.n:
            raise ValidationError(
                f"sensitive labels length {s.shape} does not match {self.features.n} rows"
            )
        if not np.all((s == 0) | (s == 1)):
            bad = s[(s != 0) & (s != 1)][0]
            raise ValidationError(f"sensitive values must be 0 or 1, got {bad!r}")
        s = s.astype(np.int8)
        s.setflags(write=False)
        object.__setattr__(self, "sensitive", s)

    def group(self, s: int) -> Dataset:
        idx = np.flatnonzero(self.sensitive == s)
        if idx.size == 0:
            raise ValidationError(f"group S={s} is empty")
        return self.features.take(idx)

    def check_nondegenerate(self):
        for s in (0, 1):
            if not np.any(self.sensitive == s):
                raise ValidationError(f"sensitive attribute is degenerate: no row with S={s}")


@dataclass(frozen=True)
class PairedSamples:
    """Source and target aligned so that row ``i`` of source is sent to row ``i`` of target."""

    source: Dataset
    target: Dataset
    cost: float
    permutation: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        if self.source.n != self.target.n or self.source.d != self.target.d:
            raise DimensionMismatchError(
                f"paired samples have shapes {self.source.points.shape} "
                f"and {self.target.points.shape}"
            )

    @property
    def n(self) -> int:
        return self.source.n

    @property
    def d(self) -> int:
        return self.source.d

    def cycle_sum(self, cycle) -> float:
        """Cyclical-monotonicity sum ``sum_k <y_k, x_{k+1} - x_k>`` over ``cycle``.

        Non-positive for every cycle when the pairing is cyclically monotone.
        """
        x, y = self.source.points, self.target.points
        c = list(cycle)
        nxt = c[1:] + c[:1]
        return math.fsum(float(y[a] @ (x[b] - x[a])) for a, b in zip(c, nxt))


def align_groups(ds0: Dataset, ds1: Dataset, seed: int = 0):
    """Subsample the larger group so both have ``min(n0, n1)`` rows.

    Selection is uniform without replacement, driven by ``seed``; selected
    rows keep their original relative order. Equal-size inputs are
    returned unchanged.
    """
    ds0, ds1 = as_dataset(ds0), as_dataset(ds1)
    if ds0.d != ds1.d:
        raise DimensionMismatchError(f"groups have dimensions {ds0.d} and {ds1.d}")
    if ds0.n == ds1.n:
        return ds0, ds1
    rng = np.random.default_rng(seed)
    m = min(ds0.n, ds1.n)
    if ds0.n > m:
        return ds0.take(np.sort(rng.choice(ds0.n, size=m, replace=False))), ds1
    return ds0, ds1.take(np.sort(rng.choice(ds1.n, size=m, replace=False)))
