"""CSV point tables and versioned JSON documents (models, classifiers, reports).

Floats are written with ``repr``, the shortest decimal string that parses
back to the identical double, so every save/load round trip is bit-exact.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .core import Dataset, GroupedDataset
from .errors import FormatError, ValidationError, VersionError
from .fairness import ClassifierSpec
from .smooth_map import FittedMap

__all__ = [
    "FORMAT_VERSION",
    "read_csv",
    "write_csv",
    "save_model",
    "load_model",
    "model_to_dict",
    "model_from_dict",
    "load_classifier",
    "save_classifier",
    "write_json",
    "read_json",
    "read_predictions",
]

FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# CSV


def read_csv(path, sensitive_col=None, columns=None):
    """Read a header-first numeric CSV.

    Parameters
    ----------
    path : str or Path
    sensitive_col : str, optional
        Name of the binary sensitive column; when given a
        :class:`GroupedDataset` is returned.
    columns : list of str, optional
        Feature columns to keep (default: every column except the sensitive one).

    Raises
    ------
    ValidationError
        Empty file, missing column, non-numeric cell (row and column are
        reported) or sensitive value outside {0, 1}.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise ValidationError(f"{path}: no data rows")
    if sensitive_col is not None and sensitive_col not in header:
        raise ValidationError(f"{path}: missing sensitive column {sensitive_col!r}")
    if columns is None:
        columns = [h for h in header if h != sensitive_col]
    for c in columns:
        if c not in header:
            raise ValidationError(f"{path}: missing column {c!r}")
    if not columns:
        raise ValidationError(f"{path}: no feature columns")
    pos = {h: k for k, h in enumerate(header)}

    def cell(r, line, name):
        k = pos[name]
        if k >= len(r):
            raise ValidationError(f"{path}: row {line} has no value for column {name!r}")
        try:
            v = float(r[k])
        except ValueError:
            raise ValidationError(f"{path}: non-numeric value {r[k]!r} at row {line}, column {name!r}") from None
        if not math.isfinite(v):
            raise ValidationError(f"{path}: non-finite value {r[k]!r} at row {line}, column {name!r}")
        return v

    feats = np.array([[cell(r, i + 2, c) for c in columns] for i, r in enumerate(body)])
    ds = Dataset(feats)
    if sensitive_col is None:
        return ds
    s = np.array([cell(r, i + 2, sensitive_col) for i, r in enumerate(body)])
    bad = np.flatnonzero((s != 0) & (s != 1))
    if bad.size:
        raise ValidationError(
            f"{path}: sensitive column {sensitive_col!r} has value {s[bad[0]]!r} at row {bad[0] + 2}; expected 0 or 1"
        )
    return GroupedDataset(ds, s.astype(np.int8))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, points, header=None, extra=None):
    """Write an ``(m, d)`` table; ``extra`` maps column names to per-row values appended on the right."""
    pts = points.points if isinstance(points, Dataset) else np.asarray(points, dtype=np.float64)
    if header is None:
        header = [f"x{k}" for k in range(pts.shape[1])]
    extra = extra or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header) + list(extra))
        cols = [np.asarray(v) for v in extra.values()]
        for i, row in enumerate(pts):
            w.writerow([_fmt(v) for v in row] + [_fmt(c[i]) for c in cols])


def read_predictions(path, m=None):
    """Read ``h_original`` and ``h_counterfactual`` label columns (external audit protocol)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    out = {}
    for name in ("h_original", "h_counterfactual"):
        if name not in header:
            raise ValidationError(f"{path}: missing column {name!r}")
        k = header.index(name)
        vals = []
        for i, r in enumerate(rows[1:]):
            try:
                v = int(float(r[k]))
            except (ValueError, IndexError):
                raise ValidationError(f"{path}: bad label at row {i + 2}, column {name!r}") from None
            if v not in (0, 1):
                raise ValidationError(f"{path}: label {v} at row {i + 2}, column {name!r} is not 0/1")
            vals.append(v)
        out[name] = np.array(vals, dtype=np.int8)
    if m is not None and out["h_original"].size != m:
        raise ValidationError(f"{path}: {out['h_original'].size} labels for {m} audited rows")
    return out["h_original"], out["h_counterfactual"]


# ---------------------------------------------------------------------------
# JSON documents


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return v
    return obj


def write_json(path, doc: dict, kind: str):
    payload = {"format_version": FORMAT_VERSION, "kind": kind, **_jsonable(doc)}
    text = json.dumps(payload, indent=1, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path, kind: str | None = None) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt or truncated file ({exc.msg} at char {exc.pos})") from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise FormatError(f"{path}: missing format_version")
    ver = doc["format_version"]
    if ver != FORMAT_VERSION:
        raise VersionError(f"{path}: format_version {ver!r} is not supported (expected {FORMAT_VERSION})")
    if kind is not None and doc.get("kind", kind) != kind:
        raise FormatError(f"{path}: expected a {kind} document, got {doc.get('kind')!r}")
    return doc


def model_to_dict(fmap: FittedMap) -> dict:
    return {
        "d": fmap.d,
        "n": fmap.n,
        "eps0": fmap.eps0,
        "smoothing": fmap.smoothing,
        "psi": fmap.psi,
        "sources": fmap.sources,
        "targets": fmap.targets,
        "prox": {"map_tol": fmap.map_tol, "prox_tol": fmap.prox_tol, "max_iter": fmap.max_iter},
        "meta": {**fmap.meta, "package_version": __version__},
    }


def model_from_dict(doc: dict) -> FittedMap:
    try:
        prox = doc.get("prox", {})
        fmap = FittedMap(
            sources=np.array(doc["sources"], dtype=np.float64),
            targets=np.array(doc["targets"], dtype=np.float64),
            psi=np.array(doc["psi"], dtype=np.float64),
            eps0=float(doc["eps0"]),
            smoothing=float(doc["smoothing"]),
            map_tol=float(prox.get("map_tol", 1e-6)),
            prox_tol=None if prox.get("prox_tol") is None else float(prox["prox_tol"]),
            max_iter=int(prox.get("max_iter", 10**6)),
            meta=dict(doc.get("meta", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"model document is incomplete or malformed: {exc}") from None
    if fmap.n != doc.get("n", fmap.n) or fmap.d != doc.get("d", fmap.d):
        raise FormatError("model document sizes do not match its arrays")
    return fmap


def save_model(fmap: FittedMap, path):
    write_json(path, model_to_dict(fmap), "model")


def load_model(path) -> FittedMap:
    return model_from_dict(read_json(path, "model"))


def save_classifier(clf: ClassifierSpec, path):
    if clf.mode != "builtin-linear":
        raise ValidationError("only builtin-linear classifiers are stored as files")
    write_json(path, {"mode": clf.mode, "weights": clf.weights, "bias": clf.bias}, "classifier")


def load_classifier(path) -> ClassifierSpec:
    doc = read_json(path, "classifier")
    mode = doc.get("mode", "builtin-linear")
    try:
        if mode == "builtin-linear":
            return ClassifierSpec(mode, {int(k): v for k, v in doc["weights"].items()},
                                  {int(k): v for k, v in doc["bias"].items()})
        return ClassifierSpec.external(doc["labels_original"], doc["labels_counterfactual"],
                                       doc.get("labels_group1"))
    except (KeyError, AttributeError, TypeError) as exc:
        raise FormatError(f"{path}: malformed classifier document ({exc})") from None
