"""Command-line entry point: ``smoothot {fit,transform,audit,repair,bench}``.

Every command is deterministic given its flags.  On failure the process
exits nonzero and writes one JSON error record to stderr::

    {"error": "<code>", "message": "..."}
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .core import Dataset, GroupedDataset
from .errors import SmoothOTError
from .fairness import AuditOptions, ClassifierSpec, audit, repair
from .io import (
    load_classifier,
    load_model,
    read_csv,
    read_json,
    read_predictions,
    save_model,
    write_csv,
    write_json,
)
from .smooth_map import DEFAULT_MAP_TOL, fit, transform
from .synthetic import FAMILIES, bench_convergence, default_grid

log = logging.getLogger("smoothot")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class _CliError(Exception):
    def __init__(self, code, message, status=EXIT_FAILURE):
        super().__init__(message)
        self.code = code
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _CliError("usage", f"{self.prog}: {message}", EXIT_USAGE)


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    """``"1,2,5"`` or a range ``"0-9"`` (inclusive)."""
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                a, b = part.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like '1,2,3' or '0-9', got {text!r}") from None
    return out


def _header(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [h.strip() for h in next(csv.reader(fh), [])]


def _load_groups(args, need_group1=True):
    """Group samples from ``--group0/--group1`` or from ``--input`` split by ``--sensitive-col``."""
    if args.input and args.sensitive_col:
        data = read_csv(args.input, sensitive_col=args.sensitive_col)
        data.check_nondegenerate()
        return data.group(0), data.group(1), data
    if not args.group0 or (need_group1 and not args.group1):
        raise _CliError("usage", "give --group0 and --group1, or --input with --sensitive-col", EXIT_USAGE)
    ds0 = read_csv(args.group0)
    ds1 = read_csv(args.group1) if args.group1 else None
    if ds1 is not None and ds1.d != ds0.d:
        raise _CliError("dimension_mismatch", f"group files have dimensions {ds0.d} and {ds1.d}")
    data = None
    if ds1 is not None:
        feats = np.vstack([ds0.points, ds1.points])
        sens = np.r_[np.zeros(ds0.n, dtype=np.int8), np.ones(ds1.n, dtype=np.int8)]
        data = GroupedDataset(Dataset(feats), sens)
    return ds0, ds1, data


def _cmd_fit(args):
    ds0, ds1, _ = _load_groups(args)
    fmap = fit(ds0, ds1, seed=args.seed, map_tol=args.map_tol, prox_tol=args.prox_tol)
    save_model(fmap, args.out)
    log.info("fitted n=%d d=%d eps0=%r smoothing=%r", fmap.n, fmap.d, fmap.eps0, fmap.smoothing)
    print(json.dumps({"out": args.out, "n": fmap.n, "d": fmap.d, "eps0": fmap.eps0, "smoothing": fmap.smoothing}))


def _model(args, index=0):
    if not args.model:
        raise _CliError("usage", "--model is required", EXIT_USAGE)
    fmap = load_model(args.model[index])
    return fmap


def _tols(args, fmap):
    tol_g = args.prox_tol if args.prox_tol is not None else None
    map_tol = args.map_tol if args.map_tol is not None else None
    if tol_g is None:
        tol_g = fmap.default_tol_g(map_tol)
    return tol_g


def _cmd_transform(args):
    fmap = _model(args)
    if not args.input:
        raise _CliError("usage", "--input is required", EXIT_USAGE)
    ds = read_csv(args.input)
    out = transform(fmap, ds, tol_g=_tols(args, fmap))
    write_csv(args.out, out, header=_header(args.input))
    print(json.dumps({"out": args.out, "rows": out.n}))


def _cmd_audit(args):
    if args.mode == "finalize":
        return _audit_finalize(args)
    fmap = _model(args)
    if args.mode == "prepare":
        if args.input and args.sensitive_col:
            ds0 = read_csv(args.input, sensitive_col=args.sensitive_col).group(0)
            names = [h for h in _header(args.input) if h != args.sensitive_col]
        elif args.group0:
            ds0 = read_csv(args.group0)
            names = _header(args.group0)
        else:
            raise _CliError("usage", "give --group0, or --input with --sensitive-col", EXIT_USAGE)
        cf = transform(fmap, ds0, tol_g=_tols(args, fmap)).points
        write_csv(args.out, np.hstack([ds0.points, cf]), header=names + [f"cf_{h}" for h in names])
        print(json.dumps({"out": args.out, "rows": ds0.n}))
        return
    if not args.classifier:
        raise _CliError("usage", "--classifier is required for audit run", EXIT_USAGE)
    clf = load_classifier(args.classifier)
    ds0, ds1, data = _load_groups(args, need_group1=False)
    cf = transform(fmap, ds0, tol_g=_tols(args, fmap)).points
    rep = audit(fmap, clf, data if data is not None else ds0, AuditOptions(), counterfactuals=cf)
    _write_report(args, rep)


def _audit_finalize(args):
    if not args.input or not args.predictions:
        raise _CliError("usage", "audit finalize needs --input (prepared file) and --predictions", EXIT_USAGE)
    names = _header(args.input)
    d = len(names) // 2
    if len(names) != 2 * d or names[d:] != [f"cf_{h}" for h in names[:d]]:
        raise _CliError("format", f"{args.input} is not an audit prepare file")
    table = read_csv(args.input).points
    ds0, cf = Dataset(table[:, :d]), table[:, d:]
    h0, h1 = read_predictions(args.predictions, m=ds0.n)
    # optional labels of an independent group-1 sample, one column named "h"
    g1 = read_csv(args.group1, columns=["h"]).points[:, 0] if args.group1 else None
    clf = ClassifierSpec.external(h0, h1, g1)
    tmap = _FixedCounterfactuals(ds0.points, cf)
    rep = audit(tmap, clf, ds0, AuditOptions(), counterfactuals=cf)
    _write_report(args, rep)


class _FixedCounterfactuals:
    """Stand-in map that returns prepared counterfactuals for the prepared originals."""

    def __init__(self, originals, counterfactuals):
        self.originals = originals
        self.counterfactuals = counterfactuals

    def __call__(self, x):
        if x.shape != self.originals.shape or not np.array_equal(x, self.originals):
            raise _CliError("validation", "counterfactuals are only known for the prepared rows")
        return self.counterfactuals


def _write_report(args, rep):
    write_json(args.out, rep.to_dict(), "audit-report")
    print(json.dumps({"out": args.out, "m": rep.m, "flip_masses": rep.flip_masses, "di": rep.di}))


def _cmd_repair(args):
    if not args.model or len(args.model) != 2:
        raise _CliError("usage", "repair needs --model twice: group0->group1 then group1->group0", EXIT_USAGE)
    if not (args.input and args.sensitive_col):
        raise _CliError("usage", "repair needs --input with --sensitive-col", EXIT_USAGE)
    m01, m10 = load_model(args.model[0]), load_model(args.model[1])
    data = read_csv(args.input, sensitive_col=args.sensitive_col)
    w0 = None
    if args.weights:
        ws = _floats(args.weights)
        if len(ws) not in (1, 2) or (len(ws) == 2 and abs(sum(ws) - 1.0) > 1e-12):
            raise _CliError("usage", "--weights takes w0 or w0,w1 with w0 + w1 = 1", EXIT_USAGE)
        w0 = ws[0]
    out = repair(m01, m10, data, w0)
    names = [h for h in _header(args.input) if h != args.sensitive_col]
    write_csv(args.out, out, header=names, extra={args.sensitive_col: data.sensitive})
    print(json.dumps({"out": args.out, "rows": out.n}))


def _cmd_bench(args):
    params = None
    if args.params:
        params = read_json(args.params) if os.path.exists(args.params) else json.loads(args.params)
        params = {k: v for k, v in params.items() if k not in ("format_version", "kind")}
    grid = default_grid(args.family, params)
    if args.grid_lo is not None:
        grid["lo"] = args.grid_lo
    if args.grid_hi is not None:
        grid["hi"] = args.grid_hi
    if args.grid_steps is not None:
        grid["steps"] = args.grid_steps
    rep = bench_convergence(args.family, params, args.n_list, args.seeds, grid)
    write_json(args.out, rep.to_dict(), "bench-report")
    print(json.dumps({"out": args.out, "median_sup": {str(n): rep.medians[n]["sup"] for n in rep.n_list}}))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", required=True, help="output file")
    common.add_argument("--seed", type=int, default=0, help="seed for group alignment (default 0)")
    common.add_argument("--map-tol", type=float, default=None, help=f"map-space accuracy (default {DEFAULT_MAP_TOL})")
    common.add_argument("--prox-tol", type=float, default=None, help="prox gap tolerance (overrides --map-tol)")
    common.add_argument("--no-color", action="store_true", help="plain log output")
    common.add_argument("-v", "--verbose", action="store_true")

    data = _Parser(add_help=False)
    data.add_argument("--group0", help="CSV of group-0 points")
    data.add_argument("--group1", help="CSV of group-1 points")
    data.add_argument("--input", help="CSV input")
    data.add_argument("--sensitive-col", help="name of the 0/1 sensitive column in --input")
    data.add_argument("--model", action="append", help="model file (repair takes it twice)")

    p = _Parser(prog="smoothot", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", parents=[common, data], help="fit a map from group 0 to group 1")
    f.set_defaults(func=_cmd_fit, map_tol=DEFAULT_MAP_TOL)

    t = sub.add_parser("transform", parents=[common, data], help="apply a fitted map to new points")
    t.set_defaults(func=_cmd_transform)

    a = sub.add_parser("audit", parents=[common, data], help="counterfactual audit of a classifier")
    a.add_argument("mode", nargs="?", choices=("run", "prepare", "finalize"), default="run")
    a.add_argument("--classifier", help="builtin-linear classifier JSON")
    a.add_argument("--predictions", help="CSV with h_original,h_counterfactual (finalize)")
    a.set_defaults(func=_cmd_audit)

    r = sub.add_parser("repair", parents=[common, data], help="move both groups to their barycenter")
    r.add_argument("--weights", help="barycenter weight w0 (or w0,w1); default group-0 proportion")
    r.set_defaults(func=_cmd_repair)

    b = sub.add_parser("bench", parents=[common], help="convergence benchmark against a closed-form map")
    b.add_argument("--family", choices=FAMILIES, required=True)
    b.add_argument("--params", help="family parameters, JSON text or file")
    b.add_argument("--n-list", type=_ints, default=[50, 100, 200, 400])
    b.add_argument("--seeds", type=_ints, default=list(range(10)))
    b.add_argument("--grid-lo", type=_floats)
    b.add_argument("--grid-hi", type=_floats)
    b.add_argument("--grid-steps", type=int)
    b.set_defaults(func=_cmd_bench)
    return p


class _Formatter(logging.Formatter):
    COLORS = {"WARNING": "\033[33m", "ERROR": "\033[31m"}

    def __init__(self, color):
        super().__init__("%(levelname)s %(name)s: %(message)s")
        self.color = color

    def format(self, record):
        text = super().format(record)
        c = self.COLORS.get(record.levelname) if self.color else None
        return f"{c}{text}\033[0m" if c else text


def _setup_logging(args):
    handler = logging.StreamHandler(sys.stderr)
    color = not args.no_color and sys.stderr.isatty()
    handler.setFormatter(_Formatter(color))
    root = logging.getLogger("smoothot")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if args.verbose else logging.WARNING)
    root.propagate = False


def _fail(code, message, status):
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    return status


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _setup_logging(args)
        args.func(args)
    except _CliError as exc:
        return _fail(exc.code, str(exc), exc.status)
    except SmoothOTError as exc:
        return _fail(exc.code, str(exc), EXIT_FAILURE)
    except OSError as exc:
        return _fail("io", f"{exc.filename or ''}: {exc.strerror or exc}".strip(": "), EXIT_FAILURE)
    return 0


if __name__ == "__main__":
    sys.exit(main())
