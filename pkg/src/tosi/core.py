"""Two-stage ToMax/ToMin tests, multi-split aggregation and p-value adjustments.

An estimator backend is any callable ``backend(rows, G) -> EstimateSet`` where
``rows`` is the data matrix restricted to one half-sample and ``G`` an array of
0-based parameter indices. Backends must be deterministic and separable: the
estimate for index ``j`` may not depend on which other indices are in ``G``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, TooFewObservationsError
from .numerics import as_data_matrix, chi2_sf, spd_inv, spd_inv_sqrt

MODES = ("max", "min")


def as_index_set(G):
    G = np.asarray(G)
    if G.ndim != 1:
        G = G.reshape(-1)
    if G.size and not np.issubdtype(G.dtype, np.integer):
        if not np.all(G == np.round(G)):
            raise DomainError("index sets must contain integers")
        G = G.astype(np.int64)
    G = G.astype(np.int64)
    if G.size == 0:
        raise DomainError("index set is empty")
    if np.unique(G).size != G.size:
        raise DomainError("index set has duplicate entries")
    if np.any(G < 0):
        raise DomainError("indices must be nonnegative (0-based)")
    return G


@dataclass(frozen=True)
class EstimateSet:
    """Per-index estimates ``theta[k]`` (q-vector) and ``sigma[k]`` (q x q) for ``indices[k]``."""

    indices: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray
    n_used: int

    def __post_init__(self):
        idx = as_index_set(self.indices)
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim == 1:
            theta = theta[:, None]
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 1:
            sigma = sigma[:, None, None]
        m, q = theta.shape
        if m != idx.size or sigma.shape != (m, q, q):
            raise DomainError(
                f"shape mismatch: {idx.size} indices, theta {theta.shape}, sigma {sigma.shape}")
        if self.n_used < 1:
            raise DomainError("n_used must be positive")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "n_used", int(self.n_used))

    @property
    def q(self):
        return self.theta.shape[1]

    def __len__(self):
        return self.indices.size

    def restrict(self, G):
        G = as_index_set(G)
        pos = {int(j): k for k, j in enumerate(self.indices)}
        try:
            rows = np.array([pos[int(j)] for j in G])
        except KeyError as exc:
            raise DomainError(f"index {exc.args[0]} not in estimate set") from None
        return EstimateSet(G, self.theta[rows], self.sigma[rows], self.n_used)

    def standardized_norms(self):
        """``||sigma_j^{-1/2} theta_j||`` for every index."""
        R = spd_inv_sqrt(self.sigma)
        return np.linalg.norm(np.einsum("kab,kb->ka", R, self.theta), axis=1)


@dataclass(frozen=True)
class SplitPlan:
    n: int
    splits: tuple

    def __len__(self):
        return len(self.splits)


@dataclass(frozen=True)
class TestResult:
    mode: str
    selected_index: int
    statistic: float
    p_value: float
    q: int
    n_bar: int

    __test__ = False  # keep pytest from collecting this class

    def to_dict(self):
        return {"mode": self.mode, "selected_index": self.selected_index,
                "statistic": self.statistic, "p_value": self.p_value,
                "q": self.q, "n_bar": self.n_bar}


@dataclass(frozen=True)
class MultiSplitResult:
    mode: str
    raw_p: tuple
    adjusted_p: tuple
    combined_p: float
    k_rejections: int
    decision: str
    alpha: float
    tests: tuple = ()
    markov: dict | None = field(default=None)

    def to_dict(self):
        out = {"mode": self.mode, "L": len(self.raw_p), "raw_p": list(self.raw_p),
               "adjusted_p": list(self.adjusted_p), "combined_p": self.combined_p,
               "k_rejections": self.k_rejections, "decision": self.decision,
               "alpha": self.alpha, "tests": [t.to_dict() for t in self.tests]}
        if self.markov is not None:
            out["markov"] = dict(self.markov)
        return out


def make_split_plan(n, L, stream):
    """``L`` independent random halvings of ``range(n)``; ``|D1| = n // 2``.

    Split ``l`` draws only from substream ``split/l``, so any subset of splits can
    be regenerated alone.
    """
    if n < 4:
        raise TooFewObservationsError(f"need at least 4 observations to split, got {n}")
    if L < 1:
        raise DomainError(f"number of splits must be positive, got {L}")
    half = n // 2
    splits = []
    for l in range(L):
        perm = stream.child("split", l).generator().permutation(n)
        splits.append((np.sort(perm[:half]), np.sort(perm[half:])))
    return SplitPlan(int(n), tuple(splits))


def stage1_select(est, mode):
    """Index with the largest (``max``) or smallest (``min``) standardized norm; ties go to
    the smallest index."""
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    if len(est) == 0:
        raise DomainError("cannot select from an empty estimate set")
    norms = est.standardized_norms()
    best = norms.max() if mode == "max" else norms.min()
    return int(est.indices[norms == best].min())


def wald_stat(theta, sigma, n_bar):
    """``n_bar * theta' sigma^{-1} theta``."""
    if n_bar < 1:
        raise DomainError(f"n_bar must be positive, got {n_bar}")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    value = float(n_bar * theta @ spd_inv(sigma) @ theta)
    return max(value, 0.0)


def _result(mode, j, est2, n_bar):
    est2 = est2.restrict([j])
    stat = wald_stat(est2.theta[0], est2.sigma[0], n_bar)
    return TestResult(mode, j, stat, chi2_sf(stat, est2.q), est2.q, int(n_bar))


def stage2_test(est2, j, mode):
    """Wald test of ``theta_j = 0`` from the second-half estimates."""
    return _result(mode, int(j), est2, est2.n_used)


def tosi_single(data, G, backend, mode, split):
    """One ToMax (``mode="max"``) or ToMin (``mode="min"``) test on a single split."""
    data = as_data_matrix(data)
    G = as_index_set(G)
    D1, D2 = split
    est1 = backend(data[D1], G)
    j = stage1_select(est1, mode)
    est2 = backend(data[D2], np.array([j]))
    return stage2_test(est2, j, mode)


def _check_pvalues(p):
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size == 0:
        raise DomainError("no p-values given")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DomainError("p-values must lie in [0, 1]")
    return p


def holm_adjust(p):
    """Bonferroni-Holm step-down adjusted p-values, in the input order."""
    p = _check_pvalues(p)
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = (m - np.arange(m)) * p[order]
    adj = np.minimum(1.0, np.maximum.accumulate(scaled))
    out = np.empty(m)
    out[order] = adj
    return out


def by_adjust(p):
    """Benjamini-Yekutieli step-up adjusted p-values, in the input order."""
    p = _check_pvalues(p)
    m = p.size
    c_m = np.sum(1.0 / np.arange(1, m + 1))
    order = np.argsort(p, kind="stable")
    scaled = c_m * m / np.arange(1, m + 1) * p[order]
    adj = np.minimum(1.0, np.minimum.accumulate(scaled[::-1])[::-1])
    out = np.empty(m)
    out[order] = adj
    return out


def markov_rule(raw_p, alpha, r):
    """The "at least k of L p-values below gamma" rule with gamma = alpha * r, k = ceil(r L)."""
    raw_p = _check_pvalues(raw_p)
    if not 0 < r <= 1:
        raise DomainError(f"r must lie in (0, 1], got {r}")
    L = raw_p.size
    k_required = max(1, math.ceil(r * L - 1e-12))
    gamma = alpha * r
    count = int(np.sum(raw_p <= gamma))
    return {"r": float(r), "gamma": float(gamma), "k_required": int(k_required),
            "count": count, "decision": "reject" if count >= k_required else "accept"}


def combine_splits(tests, alpha, markov_r=None):
    """Holm-combine single-split results into a ToMax(L)/ToMin(L) decision."""
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    raw = np.array([t.p_value for t in tests])
    adj = holm_adjust(raw)
    combined = float(adj.min())
    k = int(np.sum(adj < alpha))
    return MultiSplitResult(
        mode=tests[0].mode,
        raw_p=tuple(float(v) for v in raw),
        adjusted_p=tuple(float(v) for v in adj),
        combined_p=combined,
        k_rejections=k,
        decision="reject" if k >= 1 else "accept",
        alpha=float(alpha),
        tests=tuple(tests),
        markov=None if markov_r is None else markov_rule(raw, alpha, markov_r),
    )


def tosi_multi(data, G, backend, mode, L, alpha, stream, markov_r=None):
    """ToMax(L)/ToMin(L): ``L`` independent splits, Holm-adjusted, reject if min < alpha."""
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    data = as_data_matrix(data)
    plan = make_split_plan(data.shape[0], L, stream)
    tests = [tosi_single(data, G, backend, mode, split) for split in plan.splits]
    return combine_splits(tests, alpha, markov_r)
