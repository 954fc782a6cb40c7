"""Simulation designs, G-set families and Monte Carlo size/power tables."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import multiprocessing
import numpy as np
from scipy import stats

from .core import by_adjust, holm_adjust, make_split_plan, stage1_select, stage2_test
from .errors import DomainError, TosiError
from .factor import FactorBackend
from .mean import MeanBackend
from .numerics import RngStream, chi2_sf
from .regression import DebiasConfig, RegressionBackend, cv_lasso
from .tuning import lambda_grid, select_lambda_tosi

EXPERIMENTS = ("regression", "factor", "mean")
GSET_LABELS = ("G11", "G12", "G13", "G14", "G15", "G16",
               "G21", "G22", "G23", "G24", "G25", "G26")
NULL_GSETS = ("G11", "G12", "G13", "G21", "G22", "G23")
THREADS_ENV = "TOSI_THREADS"


def default_workers():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def gset_mode(label):
    """ToMax for the G1x families, ToMin for G2x."""
    return "max" if label.startswith("G1") else "min"


def build_gsets(p, s):
    """The twelve index families, as 0-based sorted arrays.

    ``G12`` starts at ``max(p // 2, s + 1)`` (1-based) so that it stays a set of
    zeros when the support covers more than half of the variables.
    """
    if not 0 <= s < p - 1 or p < 4:
        raise DomainError(f"need p >= 4 and s < p - 1, got p={p}, s={s}")

    def one_based(*parts):
        return np.unique(np.concatenate([np.atleast_1d(np.asarray(x)) for x in parts])) - 1

    r = np.arange
    half = max(p // 2, s + 1)
    return {
        "G11": one_based([p - 1, p]),
        "G12": one_based(r(half, p + 1)),
        "G13": one_based(r(s + 1, p + 1)),
        "G14": one_based([2, s + 1]),
        "G15": one_based([3], r(s + 1, p + 1)),
        "G16": one_based([3, 4], r(s + 1, p + 1)),
        "G21": one_based([p - 1, p]),
        "G22": one_based(r(s + 1, p + 1)),
        "G23": one_based(r(1, p + 1)),
        "G24": one_based([1, 2]),
        "G25": one_based(r(1, 5)),
        "G26": one_based(r(1, s + 1)),
    }


# --------------------------------------------------------------------------
# data-generating processes
# --------------------------------------------------------------------------

def ar1_gaussian(gen, n, p, r):
    """Rows from N(0, Sigma) with Sigma_jk = r^|j-k|, generated by the AR(1) recursion."""
    e = gen.standard_normal((n, p))
    x = np.empty((n, p))
    x[:, 0] = e[:, 0]
    w = math.sqrt(1.0 - r * r)
    for j in range(1, p):
        x[:, j] = r * x[:, j - 1] + w * e[:, j]
    return x


def draw_regression_beta(p, s, stream, rho=0.3):
    beta = np.zeros(p)
    beta[:s] = rho * stream.child("beta").generator().uniform(0.0, 2.0, s)
    return beta


def gen_regression(n, p, s, stream, rho=0.3, beta=None):
    """Sparse linear model with AR(0.9) Gaussian design and t(4)/sqrt(2) errors.

    Coefficients are ``rho * z`` with ``z ~ U[0, 2]`` on the first ``s`` variables;
    pass ``beta`` to hold them fixed across replicates.
    """
    if not 0 <= s <= p:
        raise DomainError(f"need 0 <= s <= p, got s={s}, p={p}")
    if beta is None:
        beta = draw_regression_beta(p, s, stream, rho)
    X = ar1_gaussian(stream.child("x").generator(), n, p, 0.9)
    eps = stream.child("eps").generator().standard_t(4, n) / math.sqrt(2.0)
    return X, X @ beta + eps, beta


def draw_factor_loadings(p, q, s, rho, stream):
    if q < 1 or not 0 < s <= p:
        raise DomainError(f"need q >= 1 and 0 < s <= p, got q={q}, s={s}, p={p}")
    block = s // q
    if block == 0:
        raise DomainError(f"s={s} is smaller than q={q}: empty loading blocks")
    gen = stream.child("loadings").generator()
    B = np.zeros((p, q))
    for k in range(q):
        lo = k * block
        hi = (k + 1) * block if k < q - 1 else s
        B[lo:hi, k] = rho * (1.5 - 0.24 * k + gen.uniform(0.0, 1.0, hi - lo))
    return B


def gen_factor(n, p, q, s, rho, sigma_sq, stream, B=None):
    """Sparse block loadings, AR(0.5) factors normalized to ``H'H / n = I``, iid noise."""
    if B is None:
        B = draw_factor_loadings(p, q, s, rho, stream)
    H = ar1_gaussian(stream.child("h").generator(), n, q, 0.5)
    H = H - H.mean(axis=0)
    # H (H'H / n)^{-1/2} written as sqrt(n) U V' from the SVD of H, which avoids the
    # conditioning jitter of an explicit inverse square root
    U, _, Vt = np.linalg.svd(H, full_matrices=False)
    H = math.sqrt(n) * U @ Vt
    U = math.sqrt(sigma_sq) * stream.child("u").generator().standard_normal((n, p))
    return H @ B.T + U, H, B


def gen_mean(n, p, s, rho, stream):
    theta = np.zeros(p)
    theta[:s] = rho
    return theta + stream.child("z").generator().standard_normal((n, p)), theta


# --------------------------------------------------------------------------
# size / power tables
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    experiment: str = "regression"
    n: int = 100
    p: int | None = None
    s: int | None = None
    q: int = 1
    rho: float | None = None
    sigma_sq: float = 1.0
    L_values: tuple = (1,)
    alpha: float = 0.05
    reps: int = 500
    seed: int = 0
    gsets: tuple = GSET_LABELS
    include_by: bool = True
    keep_stats: bool = False
    debias: DebiasConfig = DebiasConfig()

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise DomainError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        defaults = {"regression": (200, 5, 0.3), "factor": (150, None, 0.3), "mean": (200, 5, 0.5)}
        p, s, rho = defaults[self.experiment]
        if self.p is None:
            object.__setattr__(self, "p", p)
        if self.s is None:
            object.__setattr__(self, "s", s if s is not None else (3 * self.p) // 4)
        if self.rho is None:
            object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "L_values", tuple(sorted({int(v) for v in self.L_values})))
        object.__setattr__(self, "gsets", tuple(self.gsets))
        if self.reps < 1:
            raise DomainError("reps must be at least 1")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if not 0 <= self.s <= self.p:
            raise DomainError("need 0 <= s <= p")
        if self.n < 4:
            raise DomainError("n must be at least 4")
        if not self.L_values or self.L_values[0] < 1:
            raise DomainError("L values must be positive")
        if not self.sigma_sq > 0:
            raise DomainError("sigma_sq must be positive")
        unknown = set(self.gsets) - set(GSET_LABELS)
        if unknown or not self.gsets:
            raise DomainError(f"unknown G-set labels {sorted(unknown)}")
        build_gsets(self.p, self.s)


@dataclass(frozen=True)
class Cell:
    gset: str
    method: str
    L: int
    n: int
    rate: float
    se: float
    reps: int


@dataclass
class SimTable:
    experiment: str
    config: dict
    cells: list
    failed_replicates: int = 0
    failure_kinds: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def cell(self, gset, method, L):
        for c in self.cells:
            if c.gset == gset and c.method == method and c.L == L:
                return c
        raise KeyError((gset, method, L))

    def rate(self, gset, method, L):
        return self.cell(gset, method, L).rate

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "config": self.config,
            "cells": [asdict(c) for c in self.cells],
            "failed_replicates": self.failed_replicates,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _backend(cfg):
    if cfg.experiment == "regression":
        return RegressionBackend(cfg.debias, response=0)
    if cfg.experiment == "factor":
        return FactorBackend(cfg.q)
    return MeanBackend()


def _fixed_params(cfg, stream):
    if cfg.experiment == "regression":
        return draw_regression_beta(cfg.p, cfg.s, stream.child("params"), cfg.rho)
    if cfg.experiment == "factor":
        return draw_factor_loadings(cfg.p, cfg.q, cfg.s, cfg.rho, stream.child("params"))
    return None


def _simulate_data(cfg, params, stream):
    if cfg.experiment == "regression":
        X, y, _ = gen_regression(cfg.n, cfg.p, cfg.s, stream, cfg.rho, beta=params)
        return np.column_stack([y, X])
    if cfg.experiment == "factor":
        X, _, _ = gen_factor(cfg.n, cfg.p, cfg.q, cfg.s, cfg.rho, cfg.sigma_sq, stream, B=params)
        return X
    Z, _ = gen_mean(cfg.n, cfg.p, cfg.s, cfg.rho, stream)
    return Z


def _by_labels(cfg):
    if not cfg.include_by or cfg.experiment == "factor":
        return []
    return [g for g in cfg.gsets if gset_mode(g) == "max"]


def run_replicate(cfg, params, rep):
    """One replicate: per-split p-values for every G-set, then decisions for every L.

    Returns ``{(label, method, L): 0/1}`` plus the first-split statistics, or raises a
    :class:`TosiError` if any estimator fails.
    """
    stream = RngStream(cfg.seed, cfg.experiment).child("rep", rep)
    data = _simulate_data(cfg, params, stream.child("data"))
    backend = _backend(cfg)
    sets = build_gsets(cfg.p, cfg.s)
    labels = list(cfg.gsets)
    union = np.unique(np.concatenate([sets[g] for g in labels]))
    L_max = cfg.L_values[-1]
    plan = make_split_plan(cfg.n, L_max, stream.child("splits"))
    pvals = {g: [] for g in labels}
    first_stats = {}
    for l, (D1, D2) in enumerate(plan.splits):
        est1 = backend(data[D1], union)
        picks = {g: stage1_select(est1.restrict(sets[g]), gset_mode(g)) for g in labels}
        est2 = backend(data[D2], np.unique(list(picks.values())))
        for g in labels:
            res = stage2_test(est2, picks[g], gset_mode(g))
            pvals[g].append(res.p_value)
            if l == 0:
                first_stats[g] = res.statistic
    out = {}
    for g in labels:
        method = "ToMax" if gset_mode(g) == "max" else "ToMin"
        for L in cfg.L_values:
            out[(g, method, L)] = int(holm_adjust(pvals[g][:L]).min() < cfg.alpha)
    by_sets = _by_labels(cfg)
    if by_sets:
        by_union = np.unique(np.concatenate([sets[g] for g in by_sets]))
        est = backend(data, by_union)
        z2 = est.n_used * est.theta[:, 0] ** 2 / est.sigma[:, 0, 0]
        p_all = np.array([chi2_sf(v, 1) for v in z2])
        lookup = dict(zip(est.indices.tolist(), p_all))
        for g in by_sets:
            adj = by_adjust([lookup[int(j)] for j in sets[g]])
            out[(g, "BY", 0)] = int(adj.min() < cfg.alpha)
    return out, first_stats


def _run_chunk(cfg, params, reps):
    results = []
    for rep in reps:
        try:
            results.append((rep, *run_replicate(cfg, params, rep), None))
        except TosiError as exc:
            results.append((rep, None, None, type(exc).__name__))
    return results


def run_size_power(cfg, workers=None):
    """Monte Carlo rejection rates for every (G-set, method, L) cell of ``cfg``.

    Replicates draw from their own substreams, so the table does not depend on
    ``workers``. A replicate in which any estimator fails is dropped from all cells.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    stream = RngStream(cfg.seed, cfg.experiment)
    params = _fixed_params(cfg, stream)
    reps = list(range(cfg.reps))
    if workers == 1 or cfg.reps == 1:
        results = _run_chunk(cfg, params, reps)
    else:
        chunks = [reps[i::workers] for i in range(workers)]
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            parts = list(pool.map(_run_chunk, [cfg] * workers, [params] * workers, chunks))
        results = sorted((r for part in parts for r in part), key=lambda r: r[0])

    counts = {}
    ok = 0
    failures = {}
    stats_out = {}
    for _, out, st, err in results:
        if out is None:
            failures[err] = failures.get(err, 0) + 1
            continue
        ok += 1
        for key, v in out.items():
            counts[key] = counts.get(key, 0) + v
        if cfg.keep_stats:
            for g, v in st.items():
                stats_out.setdefault(g, []).append(v)

    cells = []
    if ok:
        for key in sorted(counts, key=lambda k: (k[0], k[1], k[2])):
            g, method, L = key
            r = counts[key] / ok
            cells.append(Cell(g, method, L, cfg.n, r, math.sqrt(r * (1 - r) / ok), ok))
    config = asdict(cfg)
    config.pop("keep_stats")
    config["L_values"] = list(cfg.L_values)
    config["gsets"] = list(cfg.gsets)
    return SimTable(cfg.experiment, config, cells, len(results) - ok, failures, stats_out)


def qq_data(stats_values, q):
    """(theoretical chi2(q) quantile at (i - 0.5)/m, i-th order statistic) pairs."""
    x = np.sort(np.asarray(stats_values, dtype=float).reshape(-1))
    if x.size == 0:
        raise DomainError("no statistics given")
    m = x.size
    theo = stats.chi2.ppf((np.arange(1, m + 1) - 0.5) / m, q)
    return np.column_stack([theo, x])


# --------------------------------------------------------------------------
# penalty selection study
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TuningStudyConfig:
    """Support recovery by TOSI-guided penalty selection versus cross-validation.

    Each replicate draws ``n + n_extra`` rows from the regression design; the last
    ``n_extra`` rows fit the lasso path, the first ``n`` carry the ToMax/ToMin tests,
    and cross-validation uses all of them.
    """

    n: int = 50
    p: int = 50
    s: int = 3
    rho: float = 2.0
    n_extra: int = 50
    reps: int = 500
    seed: int = 0
    L: int = 1
    alpha: float = 0.05
    grid_size: int = 50
    cv_folds: int = 10
    cv_grid_size: int = 100
    rule: str = "directional"
    debias: DebiasConfig = DebiasConfig()

    def __post_init__(self):
        if self.reps < 1:
            raise DomainError("reps must be at least 1")
        if not 0 < self.s < self.p:
            raise DomainError("need 0 < s < p")


def _tuning_replicate(cfg, beta, rep):
    stream = RngStream(cfg.seed, "tuning").child("rep", rep)
    X, y, _ = gen_regression(cfg.n + cfg.n_extra, cfg.p, cfg.s, stream.child("data"), cfg.rho, beta)
    main = np.column_stack([y[: cfg.n], X[: cfg.n]])
    Xe, ye = X[cfg.n:], y[cfg.n:]
    grid = lambda_grid(Xe, ye, cfg.grid_size)
    out = select_lambda_tosi(main, np.column_stack([ye, Xe]), grid, cfg.alpha, cfg.L,
                             stream.child("tosi"), cfg=cfg.debias, rule=cfg.rule)
    ratio = 1e-4 if X.shape[0] >= cfg.p else 1e-2
    _, fit = cv_lasso(X, y, cfg.cv_folds, lambda_grid(X, y, cfg.cv_grid_size, ratio), stream.child("cv"))
    return out.status, out.support, fit.support


def _selection_summary(supports, truth):
    sizes = [len(sup) for sup in supports]
    included = [set(truth) <= set(sup.tolist()) for sup in supports]
    exact = [np.array_equal(np.sort(sup), truth) for sup in supports]
    return {"NV": float(np.mean(sizes)), "IN": float(np.mean(included)), "CS": float(np.mean(exact))}


def run_tuning_study(cfg, workers=None):
    """NV (mean support size), IN (truth contained) and CS (exact support) rates.

    A TOSI run without a ``found`` penalty contributes an empty support.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    beta = draw_regression_beta(cfg.p, cfg.s, RngStream(cfg.seed, "tuning").child("params"), cfg.rho)
    reps = list(range(cfg.reps))
    if workers == 1:
        rows = [_tuning_replicate(cfg, beta, r) for r in reps]
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            rows = list(pool.map(_tuning_replicate, [cfg] * len(reps), [beta] * len(reps), reps,
                                 chunksize=max(1, len(reps) // (4 * workers))))
    truth = np.arange(cfg.s)
    statuses = {}
    for status, _, _ in rows:
        statuses[status] = statuses.get(status, 0) + 1
    config = asdict(cfg)
    return {
        "config": config,
        "beta": beta[: cfg.s].tolist(),
        "tosi": _selection_summary([r[1] for r in rows], truth),
        "cv_lasso": _selection_summary([r[2] for r in rows], truth),
        "status_counts": dict(sorted(statuses.items())),
    }
