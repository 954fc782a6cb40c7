"""Least-squares latent factor extraction and per-row loading estimates (q = number of factors)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EstimateSet, as_index_set
from .errors import DomainError, NoFactorError, SingularityError
from .numerics import as_data_matrix, thin_svd

VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class FactorFit:
    """Scores ``H`` (n x q) and loadings ``B`` (p x q) with ``H'H / n = I`` and ``B'B`` diagonal,
    decreasing, and the first nonzero entry of each loading column positive."""

    H: np.ndarray
    B: np.ndarray
    q: int
    residual_variances: np.ndarray
    singular_values: np.ndarray
    identifiable: bool
    column_means: np.ndarray


def _fix_signs(H, B):
    for k in range(B.shape[1]):
        col = B[:, k]
        big = np.abs(col) > 1e-12 * np.max(np.abs(col)) if np.any(col) else np.zeros(col.size, bool)
        if np.any(big) and col[np.argmax(big)] < 0:
            B[:, k] = -col
            H[:, k] = -H[:, k]
    return H, B


def factor_fit(X, q):
    """Minimize ``||X - H B'||_F`` over rank-``q`` factorizations after column centering."""
    X = as_data_matrix(X, "X")
    n, p = X.shape
    if isinstance(q, bool) or int(q) != q or not 1 <= q <= min(n, p):
        raise DomainError(f"number of factors q={q} outside [1, {min(n, p)}]")
    q = int(q)
    means = X.mean(axis=0)
    Xc = X - means
    k = min(q + 1, min(n, p))
    U, S, V = thin_svd(Xc, k)
    identifiable = True
    if k > q and S[q - 1] - S[q] <= 1e-12 * max(S[0], 1e-300):
        identifiable = False
    H = math.sqrt(n) * U[:, :q]
    B = V[:, :q] * (S[:q] / math.sqrt(n))
    H, B = _fix_signs(H.copy(), B.copy())
    resid = Xc - H @ B.T
    sigma_sq = np.mean(resid**2, axis=0)
    return FactorFit(H, B, q, sigma_sq, S[:q].copy(), identifiable, means)


def factor_estimates(rows, G, q):
    """Rows of ``B`` with ``sigma_j^2 I_q`` covariances for the indices in ``G``."""
    G = as_index_set(G)
    fit = factor_fit(rows, q)
    if G.max() >= fit.B.shape[0]:
        raise DomainError(f"index {G.max()} out of range for {fit.B.shape[0]} variables")
    s2 = fit.residual_variances[G]
    bad = s2 < VARIANCE_FLOOR
    if np.any(bad):
        j = int(G[np.argmax(bad)])
        raise SingularityError(f"residual variance of variable {j} is at the floor", index=j)
    sigma = s2[:, None, None] * np.eye(fit.q)
    return EstimateSet(G, fit.B[G], sigma, fit.H.shape[0])


@dataclass(frozen=True)
class FactorBackend:
    q: int = 1

    def __call__(self, rows, G):
        return factor_estimates(rows, G, self.q)


def select_q(X, q_max):
    """Eigenvalue-ratio choice of the number of factors."""
    X = as_data_matrix(X, "X")
    n, p = X.shape
    if not 1 <= q_max <= min(n, p) - 1:
        raise DomainError(f"q_max={q_max} outside [1, {min(n, p) - 1}]")
    Xc = X - X.mean(axis=0)
    ev = np.linalg.svd(Xc, compute_uv=False) ** 2 / n
    ev = ev[: q_max + 1]
    if ev[q_max] <= 0:
        # exact low rank: the first zero eigenvalue marks the rank
        nonzero = int(np.sum(ev > 1e-12 * ev[0])) if ev[0] > 0 else 0
        if nonzero == 0:
            raise NoFactorError("data matrix is identically zero after centering")
        return min(nonzero, q_max)
    ratios = ev[:-1] / ev[1:]
    if np.all(np.abs(ratios - 1.0) <= 1e-12):
        raise NoFactorError("all eigenvalue ratios equal one")
    return int(np.argmax(ratios)) + 1


def sparsify_loadings(fit, c=2.0):
    """Threshold loadings at ``c * sigma_j * sqrt(log p / n)``.

    Returns ``(rows, mask)``: the 0-based indices of rows with any retained entry and
    the p x q boolean entry mask.
    """
    if not c > 0:
        raise DomainError(f"threshold constant must be positive, got {c}")
    n = fit.H.shape[0]
    p = fit.B.shape[0]
    thr = c * np.sqrt(fit.residual_variances) * math.sqrt(math.log(p) / n)
    mask = np.abs(fit.B) > thr[:, None]
    return np.flatnonzero(mask.any(axis=1)), mask
