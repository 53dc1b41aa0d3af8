"""Shared dense linear algebra helpers for kernel Gram matrices.

Squared-exponential Grams over closely spaced points are routinely
rank-deficient in floating point, so every factorization in this package
goes through :func:`chol_with_jitter`, which escalates a diagonal nudge
instead of failing outright.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotri

__all__ = [
    "ConditioningError",
    "chol_with_jitter",
    "chol_solve",
    "chol_inverse",
    "sampling_factor",
]

# Relative diagonal nudge tried first when a plain factorization fails.
JITTER_SCALE = 1e-8
MAX_JITTER_DOUBLINGS = 6


class ConditioningError(RuntimeError):
    """A matrix could not be factorized even after jitter escalation."""

    def __init__(self, name: str, detail: str = ""):
        self.matrix_name = name
        msg = f"matrix '{name}' is numerically singular"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


def chol_with_jitter(mat: np.ndarray, name: str = "gram") -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``mat``, adding diagonal jitter if needed.

    Tries the plain factorization first so that well-conditioned inputs are
    untouched.  On failure adds ``eps * I`` with ``eps = 1e-8 * mean(diag)``
    and doubles ``eps`` up to six times before giving up.

    Returns
    -------
    (L, jitter) : lower-triangular factor and the jitter actually added
        (0.0 when none was required).

    Raises
    ------
    ConditioningError
        If no attempted factorization succeeds.
    """
    mat = np.asarray(mat, dtype=float)
    try:
        return np.linalg.cholesky(mat), 0.0
    except np.linalg.LinAlgError:
        pass
    diag_mean = float(np.mean(np.diagonal(mat)))
    if not np.isfinite(diag_mean) or diag_mean <= 0.0:
        raise ConditioningError(name, f"mean diagonal {diag_mean!r}")
    eye = np.eye(mat.shape[0])
    eps = JITTER_SCALE * diag_mean
    for _ in range(MAX_JITTER_DOUBLINGS + 1):
        try:
            return np.linalg.cholesky(mat + eps * eye), eps
        except np.linalg.LinAlgError:
            eps *= 2.0
    raise ConditioningError(name, f"jitter escalated to {eps / 2.0:.3e}")


def chol_solve(factor: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``A x = rhs`` given the lower Cholesky factor of ``A``."""
    return cho_solve((factor, True), rhs)


def chol_inverse(factor: np.ndarray) -> np.ndarray:
    """Full symmetric inverse of ``A`` from its lower Cholesky factor."""
    inv, info = dpotri(factor, lower=1)
    if info != 0:
        raise ConditioningError("inverse", f"dpotri info={info}")
    # dpotri fills the lower triangle only.
    return inv + np.tril(inv, -1).T


def sampling_factor(mat: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Factor used to draw correlated Gaussians: ``draw = L @ z``.

    A matrix that is identically zero (degenerate distribution) yields the
    zero factor so every draw collapses onto the mean.
    """
    mat = np.asarray(mat, dtype=float)
    if float(np.trace(mat)) == 0.0 and not np.any(mat):
        return np.zeros_like(mat)
    factor, _ = chol_with_jitter(mat, name=name)
    return factor
