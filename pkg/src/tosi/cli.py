"""Command-line front end: ``tosi test``, ``tosi simulate`` and ``tosi tune``.

Set files and reported indices are 1-based; the library itself is 0-based.
Exit codes: 0 success, 2 input or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import secrets
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .core import tosi_multi
from .errors import (ConvergenceError, DegreesOfFreedomError, DomainError, NoFactorError,
                     SingularityError, TosiError)
from .factor import FactorBackend
from .harness import GSET_LABELS, THREADS_ENV, SimConfig, default_workers, qq_data, run_size_power
from .mean import MeanBackend
from .numerics import RngStream
from .regression import DebiasConfig, RegressionBackend
from .tuning import RULES, select_lambda_tosi

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
NUMERICAL_ERRORS = (SingularityError, ConvergenceError, NoFactorError, DegreesOfFreedomError)
EXPERIMENT_NAMES = {"exp1": "regression", "exp2": "factor", "mean": "mean"}


class InputError(Exception):
    """Malformed user input; always mapped to exit code 2."""


@dataclass(frozen=True)
class CsvTable:
    header: tuple
    values: np.ndarray
    digest: str
    row_digests: frozenset

    def describe(self, path):
        return {"path": str(path), "rows": int(self.values.shape[0]),
                "columns": int(self.values.shape[1]), "sha256": self.digest}


def read_csv(path):
    """Comma-separated numeric table with a header row.

    Parsing never depends on the locale: ``float`` accepts only a decimal point and
    handles scientific notation. Line numbers in errors count the header as line 1.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError:
        raise InputError(f"{path} is not UTF-8 text") from None
    rows = [r for r in csv.reader(text.splitlines()) if r]
    if not rows:
        raise InputError(f"{path} is empty")
    header = tuple(h.strip() for h in rows[0])
    if len(set(header)) != len(header):
        raise InputError(f"{path}: duplicate column names in header")
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != len(header):
            raise InputError(f"{path}: row {line} has {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if not cell:
                raise InputError(f"{path}: missing value at row {line}, column {j + 1} ({header[j]})")
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}: non-numeric value {cell!r} at row {line}, "
                                 f"column {j + 1} ({header[j]})") from None
            if not np.isfinite(v):
                raise InputError(f"{path}: non-finite value {cell!r} at row {line}, "
                                 f"column {j + 1} ({header[j]})")
            values[i, j] = v
    if values.shape[0] == 0:
        raise InputError(f"{path} has a header but no data rows")
    row_digests = frozenset(hashlib.sha256(r.tobytes()).hexdigest() for r in values)
    return CsvTable(header, values, hashlib.sha256(raw).hexdigest(), row_digests)


def read_set_file(path, p):
    """1-based indices, one per line; blank lines and ``#`` comments are ignored.
    Returns 0-based indices."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    out = []
    for k, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        try:
            j = int(body)
        except ValueError:
            raise InputError(f"{path}: line {k} is not an integer: {body!r}") from None
        if not 1 <= j <= p:
            raise InputError(f"{path}: line {k}: index {j} outside 1..{p}")
        out.append(j - 1)
    if not out:
        raise InputError(f"{path}: no indices")
    if len(set(out)) != len(out):
        raise InputError(f"{path}: duplicate indices")
    return np.array(out, dtype=np.int64)


def parse_grid(text):
    """``"a,b,c"`` or ``"min:max:count"`` (geometric spacing)."""
    text = text.strip()
    if not text:
        raise InputError("lambda grid is empty")
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise InputError(f"range grid needs min:max:count, got {text!r}")
            lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
            if not (0 < lo <= hi) or count < 1:
                raise InputError(f"need 0 < min <= max and count >= 1, got {text!r}")
            grid = np.geomspace(lo, hi, count) if count > 1 else np.array([lo])
        else:
            grid = np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise InputError(f"cannot parse lambda grid {text!r}") from None
    if grid.size == 0:
        raise InputError("lambda grid is empty")
    if np.any(~np.isfinite(grid)) or np.any(grid < 0):
        raise InputError("lambda grid values must be finite and nonnegative")
    return grid


def _seed(value):
    # omitted seeds come from the OS entropy pool and are echoed in every report
    return secrets.randbits(63) if value is None else value


def _echo(argv, seed_given, seed):
    cmd = ["tosi", *argv]
    if not seed_given:
        cmd += ["--seed", str(seed)]
    return cmd


def _write(doc, out):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _one_based_result(res):
    d = res.to_dict()
    for t in d["tests"]:
        t["selected_index"] += 1
    return d


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_test(args, argv):
    start = time.perf_counter()
    table = read_csv(args.data)
    seed = _seed(args.seed)
    if args.model == "regression":
        if args.response is None:
            raise InputError("the regression model needs --response")
        if args.response not in table.header:
            raise InputError(f"response column {args.response!r} not in header")
        response = table.header.index(args.response)
        backend = RegressionBackend(DebiasConfig(), response)
        p = table.values.shape[1] - 1
        names = [h for h in table.header if h != args.response]
    else:
        backend = FactorBackend(args.q) if args.model == "factor" else MeanBackend()
        p = table.values.shape[1]
        names = list(table.header)
    modes = ["max", "min"] if args.mode == "both" else [args.mode[2:]]
    stream = RngStream(seed, "test").child("splits")
    results = []
    for path in args.set:
        G = read_set_file(path, p)
        for mode in modes:
            res = tosi_multi(table.values, G, backend, mode, args.splits, args.alpha, stream)
            out = _one_based_result(res)
            out["selected_names"] = [names[t.selected_index] for t in res.tests]
            results.append({"set_file": str(path), "set_size": int(G.size),
                            "test": "ToMax" if mode == "max" else "ToMin", "result": out})
    doc = {
        "tool": "tosi", "version": __version__, "command": _echo(argv, args.seed is not None, seed),
        "seed": seed, "model": args.model, "inputs": {"data": table.describe(args.data)},
        "results": results, "timing": {"seconds": round(time.perf_counter() - start, 6)},
    }
    _write(doc, args.out)
    return EXIT_OK


def cmd_simulate(args, argv):
    seed = _seed(args.seed)
    try:
        cfg = SimConfig(
            experiment=EXPERIMENT_NAMES[args.experiment], n=args.n, p=args.p, s=args.s, q=args.q,
            rho=args.rho, sigma_sq=args.sigma_sq, L_values=tuple(args.L or (1,)),
            alpha=args.alpha, reps=args.reps, seed=seed,
            gsets=tuple(args.gsets.split(",")) if args.gsets else GSET_LABELS,
            include_by=not args.no_by, keep_stats=args.qq_out is not None)
    except DomainError as exc:
        raise InputError(str(exc)) from None
    table = run_size_power(cfg, workers=args.threads)
    doc = table.to_dict()
    # no timing here: the document is a pure function of the configuration (seed
    # included), so repeated runs are byte-identical
    doc["tool"] = {"name": "tosi", "version": __version__}
    text = json.dumps(doc, indent=2) + "\n"
    if args.out is None or args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if args.qq_out is not None:
        q = cfg.q if cfg.experiment == "factor" else 1
        qq = {g: qq_data(v, q).tolist() for g, v in sorted(table.stats.items())}
        _write({"q": q, "seed": seed, "pairs": qq}, args.qq_out)
    return EXIT_OK


def cmd_tune(args, argv):
    start = time.perf_counter()
    grid = parse_grid(args.grid)
    main = read_csv(args.main)
    extra = read_csv(args.extra)
    if main.header != extra.header:
        raise InputError("main and extra files have different headers")
    if not args.allow_overlap:
        if main.digest == extra.digest:
            raise InputError("main and extra files are identical (use --allow-overlap to override)")
        shared = len(main.row_digests & extra.row_digests)
        if shared:
            raise InputError(f"main and extra files share {shared} rows (use --allow-overlap to override)")
    if args.response not in main.header:
        raise InputError(f"response column {args.response!r} not in header")
    response = main.header.index(args.response)
    seed = _seed(args.seed)
    outcome = select_lambda_tosi(main.values, extra.values, grid, args.alpha, args.splits,
                                 RngStream(seed, "tune").child("splits"),
                                 response=response, rule=args.rule)
    result = outcome.to_dict()
    result["support"] = [j + 1 for j in result["support"]]
    names = [h for h in main.header if h != args.response]
    result["support_names"] = [names[j - 1] for j in result["support"]]
    doc = {
        "tool": "tosi", "version": __version__, "command": _echo(argv, args.seed is not None, seed),
        "seed": seed, "inputs": {"main": main.describe(args.main), "extra": extra.describe(args.extra)},
        "result": result, "timing": {"seconds": round(time.perf_counter() - start, 6)},
    }
    _write(doc, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _probability(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text}")
    return v


def _seed_arg(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2**64), got {text}")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def build_parser():
    parser = _Parser(prog="tosi", description="Two-directional simultaneous inference.")
    parser.add_argument("--version", action="version", version=f"tosi {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="run ToMax/ToMin on index sets of a CSV data set")
    t.add_argument("--data", required=True)
    t.add_argument("--model", required=True, choices=["mean", "regression", "factor"])
    t.add_argument("--set", required=True, action="append",
                   help="file of 1-based indices, one per line; regression indices count "
                        "predictors with the response excluded (repeatable)")
    t.add_argument("--mode", default="both", choices=["tomax", "tomin", "both"])
    t.add_argument("--splits", type=_positive_int, default=8)
    t.add_argument("--alpha", type=_probability, default=0.05)
    t.add_argument("--seed", type=_seed_arg)
    t.add_argument("--response", help="header name of the response column (regression)")
    t.add_argument("--q", type=_positive_int, default=1, help="number of factors (factor)")
    t.add_argument("--out")

    s = sub.add_parser("simulate", help="Monte Carlo size/power table")
    s.add_argument("experiment", choices=sorted(EXPERIMENT_NAMES))
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--p", type=int)
    s.add_argument("--s", type=int)
    s.add_argument("--q", type=int, default=1)
    s.add_argument("--rho", type=float)
    s.add_argument("--sigma-sq", type=float, default=1.0)
    s.add_argument("--reps", type=int, default=500)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--seed", type=_seed_arg)
    s.add_argument("--L", type=int, action="append", help="number of splits (repeatable)")
    s.add_argument("--gsets", help="comma-separated labels, default all twelve")
    s.add_argument("--no-by", action="store_true", help="skip the BY comparator")
    s.add_argument("--threads", type=_positive_int, default=None,
                   help=f"worker processes (default ${THREADS_ENV} or 1)")
    s.add_argument("--qq-out", help="also write first-split statistics as QQ pairs")
    s.add_argument("--out")

    u = sub.add_parser("tune", help="select the lasso penalty with ToMax/ToMin")
    u.add_argument("--main", required=True)
    u.add_argument("--extra", required=True)
    u.add_argument("--grid", required=True, help="comma list or min:max:count")
    u.add_argument("--response", required=True)
    u.add_argument("--alpha", type=_probability, default=0.05)
    u.add_argument("--splits", type=_positive_int, default=1)
    u.add_argument("--seed", type=_seed_arg)
    u.add_argument("--rule", choices=RULES, default="directional")
    u.add_argument("--allow-overlap", action="store_true")
    u.add_argument("--out")
    return parser


COMMANDS = {"test": cmd_test, "simulate": cmd_simulate, "tune": cmd_tune}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", None) is None and args.command == "simulate":
            args.threads = default_workers()
        return COMMANDS[args.command](args, argv)
    except InputError as exc:
        print(f"tosi: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NUMERICAL_ERRORS as exc:
        where = getattr(exc, "index", None)
        suffix = f" (index {where + 1})" if where is not None else ""
        print(f"tosi: numerical failure: {exc}{suffix}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, TosiError) as exc:
        print(f"tosi: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
