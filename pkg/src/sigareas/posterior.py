"""Posterior law of the difference curve on a grid of test points.

Given fitted hyperparameters, the difference curve evaluated at the test
points is multivariate normal.  ``posterior_difference`` computes its mean
and covariance by direct solves against the observed-data system;
``posterior_difference_factored`` is an algebraically equivalent
reformulation that first conditions on the latent difference values at the
group-1 times and then extends to the grid.  The two must agree and the
second is kept as a cross-check of the first.

State probabilities classify each test point against a margin ``delta``:
state 0 when ``|mu_d| <= delta``, state 1 when ``mu_d < -delta`` and state 2
when ``mu_d > delta``.  Because each state depends only on the univariate
marginal at its point, the probabilities have exact normal-CDF expressions;
a Monte Carlo estimator over joint posterior draws is provided as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .gpr import FunctionalSample, HyperParams, _stack
from .kernels import cross_gram, gram_matrix
from .linalg import ConditioningError, chol_solve, chol_with_jitter, sampling_factor

__all__ = [
    "PredictionGrid",
    "PosteriorDifference",
    "StateProbs",
    "posterior_difference",
    "posterior_difference_factored",
    "sample_posterior",
    "state_probs_closed_form",
    "state_probs_monte_carlo",
    "posterior_mean_mu",
]

# Variances at or below VAR_FLOOR_SCALE * xi_theta are floored before use.
VAR_FLOOR_SCALE = 1e-12


@dataclass(frozen=True)
class PredictionGrid:
    """Test points inside a closed time interval.

    ``regular(t_lo, t_hi, n_cells)`` builds the canonical grid: the centers
    of ``n_cells`` equal-length subintervals.  ``from_points`` wraps an
    arbitrary strictly increasing set of times (used when decisions are made
    at the observation times themselves); its cell edges are midpoints.
    """

    t_lo: float
    t_hi: float
    points: np.ndarray
    is_regular: bool

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise ValueError("grid must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if pts.size > 1 and not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")
        if not (self.t_lo <= pts[0] and pts[-1] <= self.t_hi):
            raise ValueError("grid points must lie inside [t_lo, t_hi]")
        if self.is_regular and pts.size > 1:
            width = (self.t_hi - self.t_lo) / pts.size
            expected = self.t_lo + (np.arange(pts.size) + 0.5) * width
            if not np.allclose(pts, expected, rtol=0, atol=1e-9 * max(1.0, abs(self.t_hi))):
                raise ValueError("regular grid points must be cell centers")
        object.__setattr__(self, "points", pts)

    @classmethod
    def regular(cls, t_lo: float, t_hi: float, n_cells: int) -> "PredictionGrid":
        if n_cells < 1:
            raise ValueError("n_cells must be >= 1")
        if not (np.isfinite(t_lo) and np.isfinite(t_hi) and t_lo < t_hi):
            raise ValueError("need finite t_lo < t_hi")
        width = (t_hi - t_lo) / n_cells
        points = t_lo + (np.arange(n_cells) + 0.5) * width
        return cls(t_lo=float(t_lo), t_hi=float(t_hi), points=points, is_regular=True)

    @classmethod
    def from_points(cls, points, t_lo: float | None = None, t_hi: float | None = None):
        pts = np.sort(np.atleast_1d(np.asarray(points, dtype=float)))
        lo = float(pts[0]) if t_lo is None else float(t_lo)
        hi = float(pts[-1]) if t_hi is None else float(t_hi)
        return cls(t_lo=lo, t_hi=hi, points=pts, is_regular=False)

    @property
    def n_cells(self) -> int:
        return self.points.size

    @property
    def cell_width(self) -> float:
        return (self.t_hi - self.t_lo) / self.n_cells

    @property
    def cell_edges(self) -> np.ndarray:
        """Boundaries of the per-point cells, length ``n_cells + 1``."""
        if self.is_regular:
            return self.t_lo + np.arange(self.n_cells + 1) * self.cell_width
        mid = 0.5 * (self.points[1:] + self.points[:-1])
        return np.concatenate([[self.t_lo], mid, [self.t_hi]])


@dataclass(frozen=True)
class PosteriorDifference:
    """Normal posterior of the difference curve at the grid points."""

    grid: PredictionGrid
    mean: np.ndarray
    cov: np.ndarray
    var_floor: float = 0.0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        n = self.grid.n_cells
        if mean.shape != (n,) or cov.shape != (n, n):
            raise ValueError("mean/cov shapes must match the grid size")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class StateProbs:
    """Per-point posterior probabilities of the three hypothesis states."""

    grid: PredictionGrid
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    delta: float

    def __post_init__(self):
        n = self.grid.n_cells
        for name in ("s0", "s1", "s2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have length {n}")
            object.__setattr__(self, name, arr)
        if self.delta < 0:
            raise ValueError("delta must be >= 0")


def _posterior_core(theta_hat: HyperParams, sample1, sample2):
    """Pieces shared by both posterior routes.

    Returns the group-1 weight vector b = (I - S11) y1 - S12 y2 together
    with S11 and the theta Gram over group-1 times.
    """
    t_all, _, n1 = _stack(sample1, sample2)
    if sample1.group == 2:
        sample1, sample2 = sample2, sample1
    k_full = gram_matrix(theta_hat.eta, t_all)
    noisy = k_full + theta_hat.sigma2 * np.eye(t_all.size)
    factor, _ = chol_with_jitter(noisy, name="kappa gram plus noise")
    # Sigma = K (K + sigma2 I)^{-1}; solve gives its transpose.
    sigma = chol_solve(factor, k_full).T
    s11 = sigma[:n1, :n1]
    s12 = sigma[:n1, n1:]
    b = sample1.y - s11 @ sample1.y - s12 @ sample2.y
    gamma = gram_matrix(theta_hat.theta, sample1.t)
    return sample1, b, s11, gamma


def posterior_difference(
    theta_hat: HyperParams,
    sample1: FunctionalSample,
    sample2: FunctionalSample,
    grid: PredictionGrid,
) -> PosteriorDifference:
    """Posterior mean and covariance of the difference curve on ``grid``.

    Mean solves the group-1 system ``(sigma2 I + (I - S11) Gamma) x = b``;
    covariance is the prior Gram on the grid minus the information gained
    through the observed group-1 times:

        cov = Gamma_* - Psi Gamma^{-1} Psi' + sigma2 Psi Omega^{-1} Psi',
        Omega = sigma2 Gamma + Gamma (I - S11) Gamma.
    """
    sample1, b, s11, gamma = _posterior_core(theta_hat, sample1, sample2)
    n1 = sample1.n
    sigma2 = theta_hat.sigma2
    psi = cross_gram(theta_hat.theta, grid.points, sample1.t)
    gamma_star = gram_matrix(theta_hat.theta, grid.points)

    i_minus_s11 = np.eye(n1) - s11
    mean_system = sigma2 * np.eye(n1) + i_minus_s11 @ gamma
    try:
        mean = psi @ np.linalg.solve(mean_system, b)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("posterior mean system", str(exc)) from exc

    gamma_factor, _ = chol_with_jitter(gamma, name="gamma gram (group-1 times)")
    omega = sigma2 * gamma + gamma @ i_minus_s11 @ gamma
    omega = 0.5 * (omega + omega.T)
    omega_factor, _ = chol_with_jitter(omega, name="omega matrix")

    cov = (
        gamma_star
        - psi @ chol_solve(gamma_factor, psi.T)
        + sigma2 * (psi @ chol_solve(omega_factor, psi.T))
    )
    cov = 0.5 * (cov + cov.T)
    return PosteriorDifference(
        grid=grid, mean=mean, cov=cov, var_floor=VAR_FLOOR_SCALE * theta_hat.theta.xi
    )


def posterior_difference_factored(
    theta_hat: HyperParams,
    sample1: FunctionalSample,
    sample2: FunctionalSample,
    grid: PredictionGrid,
) -> PosteriorDifference:
    """Equivalent two-stage computation, kept as an independent cross-check.

    Conditions on the latent difference values at the group-1 times first
    (a normal with precision-like matrix A = sigma2 Gamma^{-1} + I - S11,
    location A^{-1} b) and then extends to the grid through the prior:

        mean = Psi Gamma^{-1} A^{-1} b,
        cov  = sigma2 Psi Gamma^{-1} A^{-1} Gamma^{-1} Psi'
               + Gamma_* - Psi Gamma^{-1} Psi'.
    """
    sample1, b, s11, gamma = _posterior_core(theta_hat, sample1, sample2)
    n1 = sample1.n
    sigma2 = theta_hat.sigma2
    psi = cross_gram(theta_hat.theta, grid.points, sample1.t)
    gamma_star = gram_matrix(theta_hat.theta, grid.points)

    gamma_factor, _ = chol_with_jitter(gamma, name="gamma gram (group-1 times)")
    a = sigma2 * chol_solve(gamma_factor, np.eye(n1)) + np.eye(n1) - s11
    a = 0.5 * (a + a.T)
    a_factor, _ = chol_with_jitter(a, name="latent difference system")

    mean = psi @ chol_solve(gamma_factor, chol_solve(a_factor, b))
    w = chol_solve(gamma_factor, psi.T)
    cov = sigma2 * (w.T @ chol_solve(a_factor, w)) + gamma_star - psi @ w
    cov = 0.5 * (cov + cov.T)
    return PosteriorDifference(
        grid=grid, mean=mean, cov=cov, var_floor=VAR_FLOOR_SCALE * theta_hat.theta.xi
    )


def sample_posterior(post: PosteriorDifference, m: int, seed) -> np.ndarray:
    """Draw ``m`` joint samples of the difference curve, one per row."""
    if m < 1:
        raise ValueError("m must be >= 1")
    factor = sampling_factor(post.cov, name="posterior covariance")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((m, post.grid.n_cells))
    return post.mean[None, :] + z @ factor.T


def _floored_variances(post: PosteriorDifference) -> np.ndarray:
    v = np.diagonal(post.cov).copy()
    v[v < 0.0] = 0.0
    if post.var_floor > 0.0:
        v = np.maximum(v, post.var_floor)
    return v


def state_probs_closed_form(post: PosteriorDifference, delta: float) -> StateProbs:
    """Exact state probabilities from the per-point normal marginals.

    With mean m and variance v at a point,
    s0 = Phi((delta - m)/sqrt(v)) - Phi((-delta - m)/sqrt(v)),
    s1 = Phi((-delta - m)/sqrt(v)), s2 = 1 - Phi((delta - m)/sqrt(v)).
    Zero-variance points degenerate to indicators of the point mass.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    m = post.mean
    v = _floored_variances(post)
    s0 = np.empty_like(m)
    s1 = np.empty_like(m)
    s2 = np.empty_like(m)
    degenerate = v <= 0.0
    if np.any(degenerate):
        md = m[degenerate]
        s0[degenerate] = (np.abs(md) <= delta).astype(float)
        s1[degenerate] = (md < -delta).astype(float)
        s2[degenerate] = (md > delta).astype(float)
    ok = ~degenerate
    if np.any(ok):
        sd = np.sqrt(v[ok])
        upper = (delta - m[ok]) / sd
        lower = (-delta - m[ok]) / sd
        s0[ok] = np.maximum(ndtr(upper) - ndtr(lower), 0.0)
        s1[ok] = ndtr(lower)
        s2[ok] = ndtr(-upper)
    return StateProbs(grid=post.grid, s0=s0, s1=s1, s2=s2, delta=float(delta))


def state_probs_monte_carlo(
    draws: np.ndarray, delta: float, grid: PredictionGrid
) -> StateProbs:
    """Empirical state proportions from an M x N matrix of posterior draws.

    The three proportions partition the draws, so they sum to one exactly.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[0] < 1:
        raise ValueError("draws must be an M x N matrix with M >= 1")
    m = draws.shape[0]
    s1 = np.count_nonzero(draws < -delta, axis=0) / m
    s2 = np.count_nonzero(draws > delta, axis=0) / m
    s0 = 1.0 - s1 - s2
    return StateProbs(grid=grid, s0=s0, s1=s1, s2=s2, delta=float(delta))


def posterior_mean_mu(
    theta_hat: HyperParams,
    sample1: FunctionalSample,
    sample2: FunctionalSample,
    grid: PredictionGrid,
) -> np.ndarray:
    """Posterior mean of the shared curve ``mu`` at the grid points.

    Standard GP conditional against the full joint covariance of the stacked
    responses; used for reporting estimated group mean curves.
    """
    from .gpr import joint_covariance

    t_all, y_all, _ = _stack(sample1, sample2)
    c = joint_covariance(theta_hat, sample1, sample2)
    factor, _ = chol_with_jitter(c, name="joint covariance")
    k_star = cross_gram(theta_hat.eta, grid.points, t_all)
    return k_star @ chol_solve(factor, y_all)
