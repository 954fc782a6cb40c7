"""Penalty selection by paired ToMax/ToMin tests on the implied zero and nonzero sets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import combine_splits, make_split_plan, stage1_select, stage2_test
from .errors import ConvergenceError, DomainError
from .numerics import as_data_matrix
from .regression import DebiasConfig, RegressionBackend, lambda_max, lasso_cd

STATUSES = ("found", "boundary_low", "boundary_high")
RULES = ("directional", "first_joint")
EXTRA_SIZE = 50


@dataclass(frozen=True)
class TraceEntry:
    lam: float
    n_zero: int
    n_nonzero: int
    p_max: float | None
    p_min: float | None
    decision: str
    note: str = ""


@dataclass(frozen=True)
class TuningOutcome:
    """Result of :func:`select_lambda_tosi`.

    ``lambda_star`` is ``None`` unless ``status == "found"``. ``support`` is the
    0-based lasso support at ``lambda_star`` on the extra sample (empty otherwise).
    ``monotone_violations`` lists grid positions (in descending-lambda order) where
    the zero set shrank although the penalty grew.
    """

    lambda_star: float | None
    status: str
    trace: tuple
    support: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    monotone_violations: tuple = ()
    alpha: float = 0.05
    L: int = 1
    rule: str = "directional"

    def to_dict(self):
        return {
            "lambda_star": self.lambda_star,
            "status": self.status,
            "support": [int(j) for j in self.support],
            "monotone_violations": list(self.monotone_violations),
            "alpha": self.alpha,
            "L": self.L,
            "rule": self.rule,
            "trace": [asdict(t) for t in self.trace],
        }


def lambda_grid(X, y, count=50, ratio=None):
    """Geometric grid from ``lambda_max`` down to ``ratio * lambda_max``, descending.

    ``ratio`` defaults to 1e-4 when ``n >= p`` and 1e-2 otherwise.
    """
    X = as_data_matrix(X, "X")
    if count < 1:
        raise DomainError(f"grid needs at least one point, got {count}")
    n, p = X.shape
    if ratio is None:
        ratio = 1e-4 if n >= p else 1e-2
    if not 0 < ratio < 1:
        raise DomainError(f"ratio must lie in (0, 1), got {ratio}")
    top = lambda_max(X, y)
    if not top > 0:
        raise DomainError("response is orthogonal to every column; no nontrivial grid")
    if count == 1:
        return np.array([top])
    return top * np.geomspace(1.0, ratio, count)


class _SplitCache:
    """Full-index estimates on each half of each split, computed once and reused
    for every grid point (the backend is separable per index)."""

    def __init__(self, data, backend, L, stream):
        p = data.shape[1] - 1
        everything = np.arange(p)
        plan = make_split_plan(data.shape[0], L, stream)
        self.halves = [(backend(data[D1], everything), backend(data[D2], everything))
                       for D1, D2 in plan.splits]

    def combined(self, G, mode, alpha):
        tests = []
        for est1, est2 in self.halves:
            j = stage1_select(est1.restrict(G), mode)
            tests.append(stage2_test(est2.restrict([j]), j, mode))
        return combine_splits(tests, alpha)


def _scan(entries, rule):
    """Index of the chosen grid point in ``entries`` (descending lambda) and the status."""
    usable = [i for i, e in enumerate(entries) if e.decision != "skipped"]
    if rule == "first_joint":
        for i in usable:
            if entries[i].decision == "found":
                return i, "found"
        accepted = any(entries[i].decision == "min_accepts" for i in usable)
        return None, "boundary_high" if accepted else "boundary_low"
    # directional: move to smaller lambda while the zero set is rejected; at the first
    # accepted zero set, stop if the nonzero set is rejected, otherwise larger
    # penalties are needed but have already been ruled out by ToMax
    for i in usable:
        if entries[i].decision == "max_rejects":
            continue
        if entries[i].decision == "found":
            return i, "found"
        return None, "boundary_high"
    return None, "boundary_low"


def select_lambda_tosi(data_main, data_extra, grid, alpha=0.05, L=1, stream=None, *,
                       cfg=DebiasConfig(), response=0, rule="directional"):
    """Choose the lasso penalty whose zero set passes ToMax and whose nonzero set fails ToMin.

    For every grid penalty the lasso is fit on ``data_extra``; its zeros form
    ``G_zero`` and its support ``G_nonzero``. ToMax(L) on ``G_zero`` and ToMin(L)
    on ``G_nonzero`` are run on ``data_main`` with the same ``L`` splits at every
    grid point. The grid is visited from the largest penalty down.

    ``rule="directional"`` stops at the first penalty where ToMax accepts: the
    outcome is ``found`` if ToMin rejects there and ``boundary_high`` otherwise.
    ``rule="first_joint"`` instead returns the first penalty where both hold.
    ``boundary_low`` means ToMax rejected at every usable grid point.
    """
    if stream is None:
        raise DomainError("a random stream is required for the splits")
    if rule not in RULES:
        raise DomainError(f"rule must be one of {RULES}, got {rule!r}")
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise DomainError("lambda grid is empty")
    if np.any(~(grid >= 0)) or np.any(~np.isfinite(grid)):
        raise DomainError("lambda grid must be finite and nonnegative")
    main = as_data_matrix(data_main, "main data")
    extra = as_data_matrix(data_extra, "extra data")
    if main.shape[1] != extra.shape[1]:
        raise DomainError(f"main data has {main.shape[1]} columns, extra data {extra.shape[1]}")
    if not 0 <= response < main.shape[1]:
        raise DomainError(f"response column {response} out of range")

    backend = RegressionBackend(cfg, response)
    X_extra, y_extra = backend.split_xy(extra)
    p = X_extra.shape[1]
    lams = np.unique(grid)[::-1]
    cache = _SplitCache(main, backend, L, stream)

    entries, supports = [], []
    for lam in lams:
        # cold starts: the support at a penalty never depends on the rest of the grid
        try:
            support = lasso_cd(X_extra, y_extra, lam).support
        except ConvergenceError as err:
            # near-interpolating penalties on a square extra sample can stall
            supports.append(np.zeros(0, dtype=np.int64))
            entries.append(TraceEntry(float(lam), 0, 0, None, None, "skipped",
                                      f"lasso did not converge (KKT residual {err.residual:.3g})"))
            continue
        zeros = np.setdiff1d(np.arange(p), support)
        supports.append(support)
        if zeros.size == 0 or support.size == 0:
            empty = "zero set" if zeros.size == 0 else "nonzero set"
            entries.append(TraceEntry(float(lam), int(zeros.size), int(support.size),
                                      None, None, "skipped", f"empty {empty}"))
            continue
        p_max = cache.combined(zeros, "max", alpha).combined_p
        p_min = cache.combined(support, "min", alpha).combined_p
        if p_max < alpha:
            decision = "max_rejects"
        elif p_min < alpha:
            decision = "found"
        else:
            decision = "min_accepts"
        entries.append(TraceEntry(float(lam), int(zeros.size), int(support.size),
                                  float(p_max), float(p_min), decision))

    fitted = [i for i, e in enumerate(entries) if not e.note.startswith("lasso")]
    violations = tuple(b for a, b in zip(fitted, fitted[1:])
                       if entries[b].n_zero > entries[a].n_zero)
    chosen, status = _scan(entries, rule)
    if chosen is None:
        return TuningOutcome(None, status, tuple(entries), np.zeros(0, dtype=np.int64),
                             violations, float(alpha), int(L), rule)
    return TuningOutcome(entries[chosen].lam, status, tuple(entries), supports[chosen],
                         violations, float(alpha), int(L), rule)


def exact_support(outcome, true_support):
    """Whether ``outcome`` found a penalty whose support equals ``true_support``."""
    if outcome.status != "found":
        return False
    return np.array_equal(np.sort(outcome.support), np.sort(np.asarray(true_support)))

