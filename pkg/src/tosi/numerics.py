"""Numerical substrate: chi-square tails, thin SVD, SPD inverse square roots, seeded streams."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularityError

_EPS = 1e-16
_FPMIN = 1e-300
_MAX_TERMS = 10_000

SPD_JITTER = 1e-10
SPD_FLOOR = 1e-12


def as_data_matrix(values, name="data"):
    """Validate and return ``values`` as a finite 2-D float array (rows = observations)."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DomainError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DomainError(f"{name} must have at least one row and one column")
    if not np.all(np.isfinite(arr)):
        i, j = np.argwhere(~np.isfinite(arr))[0]
        raise DomainError(f"{name} has a non-finite entry at row {i}, column {j}")
    return arr


# --------------------------------------------------------------------------
# chi-square upper tail
# --------------------------------------------------------------------------

def _log_prefactor(a, x):
    return -x + a * math.log(x) - math.lgamma(a)


def _gamma_p_series(a, x):
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(_log_prefactor(a, x))


def _gamma_q_contfrac(a, x):
    # modified Lentz evaluation of the Legendre continued fraction
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(_log_prefactor(a, x)) * h


def gammaincc(a, x):
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise DomainError(f"shape must be positive, got {a}")
    if x < 0 or math.isnan(x):
        raise DomainError(f"argument must be nonnegative, got {x}")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_p_series(a, x))
    return min(1.0, _gamma_q_contfrac(a, x))


def chi2_sf(x, q):
    """P(chi2(q) > x).

    >>> round(chi2_sf(5.991465, 2), 6)
    0.05
    """
    if isinstance(q, bool) or int(q) != q or q < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {q}")
    x = float(x)
    if not x >= 0:
        raise DomainError(f"statistic must be nonnegative, got {x}")
    return gammaincc(0.5 * q, 0.5 * x)


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------

def thin_svd(M, k):
    """Rank-``k`` truncated SVD ``M ~ U diag(S) V^T`` with ``U``: n x k, ``V``: d x k."""
    M = as_data_matrix(M, "matrix")
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= min(M.shape):
        raise DomainError(f"rank k={k} outside [1, {min(M.shape)}]")
    k = int(k)
    U, S, Vt = np.linalg.svd(M, full_matrices=False)
    return U[:, :k], S[:k], Vt[:k].T


def _conditioned_eigh(S):
    S = np.asarray(S, dtype=float)
    if S.ndim < 2 or S.shape[-1] != S.shape[-2]:
        raise DomainError(f"expected square matrices, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise SingularityError("covariance matrix has non-finite entries")
    scale = np.max(np.abs(S), axis=(-2, -1), keepdims=True)
    asym = np.max(np.abs(S - np.swapaxes(S, -1, -2)), axis=(-2, -1), keepdims=True)
    if np.any(asym > 1e-12 * np.maximum(scale, _FPMIN)):
        raise DomainError("covariance matrix is not symmetric")
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    dim = S.shape[-1]
    trace = np.trace(S, axis1=-2, axis2=-1)[..., None, None]
    S = S + (SPD_JITTER * trace / dim) * np.eye(dim)
    w, V = np.linalg.eigh(S)
    wmax = w[..., -1]
    bad = np.atleast_1d((wmax <= 0) | (w[..., 0] <= SPD_FLOOR * wmax))
    if np.any(bad):
        raise SingularityError("covariance matrix is singular after conditioning",
                               index=int(np.flatnonzero(bad)[0]) if S.ndim > 2 else None)
    return w, V


def spd_inv_sqrt(S):
    """Symmetric inverse square root of an SPD matrix (or a stack of them, shape (..., q, q))."""
    w, V = _conditioned_eigh(S)
    return (V * (1.0 / np.sqrt(w))[..., None, :]) @ np.swapaxes(V, -1, -2)


def spd_inv(S):
    w, V = _conditioned_eigh(S)
    return (V * (1.0 / w)[..., None, :]) @ np.swapaxes(V, -1, -2)


# --------------------------------------------------------------------------
# reproducible random streams
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """A named, counter-based random substream.

    The Philox key is a hash of ``(seed, label)``, so a stream's draws depend on
    nothing but its identity: no shared state, no dependence on call order.
    """

    seed: int
    label: str = ""

    def __post_init__(self):
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be an integer in [0, 2**64), got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))

    def child(self, *parts):
        suffix = "/".join(str(p) for p in parts)
        return RngStream(self.seed, f"{self.label}/{suffix}" if self.label else suffix)

    def key(self):
        digest = hashlib.sha256(f"{self.seed}\x1f{self.label}".encode()).digest()
        return int.from_bytes(digest[:16], "little")

    def generator(self):
        return np.random.Generator(np.random.Philox(key=self.key()))


def draw(stream, dist, count, *, df=None, low=0.0, high=1.0):
    """Draw ``count`` values from ``dist`` in {"normal", "t", "uniform"} on ``stream``."""
    if isinstance(count, bool) or int(count) != count or count < 0:
        raise DomainError(f"count must be a nonnegative integer, got {count}")
    gen = stream.generator()
    if dist == "normal":
        return gen.standard_normal(int(count))
    if dist == "t":
        if df is None or not df > 0:
            raise DomainError(f"student-t needs df > 0, got {df}")
        return gen.standard_t(df, int(count))
    if dist == "uniform":
        if not low < high:
            raise DomainError(f"uniform needs low < high, got ({low}, {high})")
        return gen.uniform(low, high, int(count))
    raise DomainError(f"unknown distribution {dist!r}")
