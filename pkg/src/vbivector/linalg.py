"""Symmetric positive-definite matrices: Cholesky solves and log-determinants."""

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import DegeneracyError, RejectedInputError

__all__ = ["SymPosDef", "chol_solve", "logdet", "batched_cholesky"]


class SymPosDef:
    """An SPD matrix together with its lower Cholesky factor.

    The stored matrix is the symmetrized input ``(A + A.T) / 2`` so that it
    equals its transpose exactly.  Construction fails with
    :class:`DegeneracyError` when the factorization has a non-positive pivot.
    """

    __slots__ = ("data", "factor")

    def __init__(self, matrix):
        a = np.array(matrix, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise RejectedInputError(f"expected a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise RejectedInputError("matrix has non-finite entries")
        a = 0.5 * (a + a.T)
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise DegeneracyError("matrix is not positive definite") from exc
        a.setflags(write=False)
        chol.setflags(write=False)
        self.data = a
        self.factor = chol

    @property
    def dim(self):
        return self.data.shape[0]

    def solve(self, b):
        return chol_solve(self, b)

    def logdet(self):
        return logdet(self)

    def inverse(self):
        inv_l = solve_triangular(self.factor, np.eye(self.dim), lower=True)
        # L^-T L^-1 is symmetric bit-for-bit
        return inv_l.T @ inv_l

    def __repr__(self):
        return f"SymPosDef(dim={self.dim})"


def chol_solve(a, b):
    """Solve ``A X = B`` using the cached factor of ``a``."""
    if not isinstance(a, SymPosDef):
        a = SymPosDef(a)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.dim:
        raise RejectedInputError(f"right-hand side has {b.shape[0]} rows, matrix has dim {a.dim}")
    if not np.all(np.isfinite(b)):
        raise RejectedInputError("right-hand side has non-finite entries")
    z = solve_triangular(a.factor, b, lower=True)
    return solve_triangular(a.factor, z, lower=True, trans="T")


def logdet(a):
    """ln det A from the diagonal of the Cholesky factor."""
    if not isinstance(a, SymPosDef):
        a = SymPosDef(a)
    return 2.0 * float(np.sum(np.log(np.diagonal(a.factor))))


def batched_cholesky(stack):
    """Lower Cholesky factors of a ``(..., n, n)`` stack; raises on failure."""
    try:
        return np.linalg.cholesky(stack)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("stacked matrix is not positive definite") from exc
