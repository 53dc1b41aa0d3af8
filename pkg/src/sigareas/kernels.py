"""Covariance kernels for the latent mean curves.

Both latent processes (the shared mean and the between-group difference)
use the same parametric family: a squared-exponential term plus an optional
nonstationary linear term,

    k(t, t') = xi * exp(-omega * (t - t')**2 / 2) + zeta * t * t'.

With ``zeta = 0`` the kernel is stationary and ``1/omega`` acts as a squared
length-scale: large values give essentially flat curves, small values give
rapidly fluctuating ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["KernelSpec", "kernel_eval", "gram_matrix", "cross_gram"]


@dataclass(frozen=True)
class KernelSpec:
    """Hyperparameters of one covariance kernel.

    Attributes
    ----------
    xi : signal variance (squared response units), >= 0.
    omega : inverse squared length-scale (1/time^2), >= 0.
    zeta : linear-term coefficient (squared response per squared time), >= 0.
    """

    xi: float
    omega: float
    zeta: float = 0.0

    def __post_init__(self):
        for field in ("xi", "omega", "zeta"):
            value = getattr(self, field)
            if not math.isfinite(value) or value < 0.0:
                raise ValueError(f"kernel parameter {field} must be finite and >= 0, got {value!r}")

    @property
    def stationary(self) -> bool:
        return self.zeta == 0.0


def kernel_eval(spec: KernelSpec, t, t_prime):
    """Evaluate the kernel at a pair of times (broadcasts over arrays)."""
    t = np.asarray(t, dtype=float)
    t_prime = np.asarray(t_prime, dtype=float)
    d = t - t_prime
    # zeta * (t * t') rather than (zeta * t) * t': bitwise symmetric in (t, t')
    value = spec.xi * np.exp(-0.5 * spec.omega * d * d) + spec.zeta * (t * t_prime)
    return value if value.ndim else float(value)


def _check_times(times, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(times, dtype=float))
    if arr.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def gram_matrix(spec: KernelSpec, times) -> np.ndarray:
    """Symmetric PSD matrix of kernel values over all pairs of ``times``."""
    t = _check_times(times, "times")
    return cross_gram(spec, t, t)


def cross_gram(spec: KernelSpec, times_a, times_b) -> np.ndarray:
    """Rectangular matrix with (i, j) entry ``k(times_a[i], times_b[j])``."""
    a = _check_times(times_a, "times_a")
    b = _check_times(times_b, "times_b")
    d = a[:, None] - b[None, :]
    out = spec.xi * np.exp(-0.5 * spec.omega * d * d)
    if spec.zeta != 0.0:
        out += spec.zeta * np.outer(a, b)
    return out
