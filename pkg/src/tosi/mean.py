"""Coordinatewise sample means (q = 1)."""

from dataclasses import dataclass

import numpy as np

from .core import EstimateSet, as_index_set
from .errors import DomainError, SingularityError
from .numerics import as_data_matrix


@dataclass(frozen=True)
class MeanBackend:
    """Sample mean with unbiased sample variance for each requested column.

    A column whose variance falls below ``variance_floor * (1 + mean**2)`` is
    treated as constant and raises :class:`SingularityError`.
    """

    variance_floor: float = 1e-12

    def __post_init__(self):
        if not self.variance_floor > 0:
            raise DomainError("variance floor must be positive")

    def __call__(self, rows, G):
        return mean_estimates(rows, G, self.variance_floor)


def mean_estimates(rows, G, variance_floor=1e-12):
    Z = as_data_matrix(rows)
    G = as_index_set(G)
    n = Z.shape[0]
    if n < 2:
        raise DomainError("need at least two rows for a sample variance")
    if G.max() >= Z.shape[1]:
        raise DomainError(f"index {G.max()} out of range for {Z.shape[1]} columns")
    cols = Z[:, G]
    theta = cols.mean(axis=0)
    var = cols.var(axis=0, ddof=1)
    bad = var < variance_floor * (1.0 + theta**2)
    if np.any(bad):
        j = int(G[np.argmax(bad)])
        raise SingularityError(f"column {j} is constant on these rows", index=j)
    return EstimateSet(G, theta[:, None], var[:, None, None], n)
