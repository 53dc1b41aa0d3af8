"""Two-sample Gaussian process regression model and hyperparameter fitting.

The generative model couples the groups through a shared latent curve plus a
group-1-only difference curve:

    Y1(t) = mu(t) + mu_d(t) + eps1(t),
    Y2(t) = mu(t) + eps2(t),

with independent zero-mean GP priors on ``mu`` (kernel ``eta``) and ``mu_d``
(kernel ``theta``) and iid Gaussian noise of variance ``sigma2``.
Marginalizing the latent curves gives a zero-mean multivariate normal for the
stacked responses with covariance

    C = K_n + blockdiag(Gamma_n1, 0) + sigma2 * I,

where K_n is the ``eta`` Gram over all observation times (group 1 first) and
Gamma_n1 the ``theta`` Gram over group-1 times.  Everything here works with
that closed form; no latent-space integration is performed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .kernels import KernelSpec
from .linalg import ConditioningError, chol_inverse, chol_solve, chol_with_jitter

__all__ = [
    "FunctionalSample",
    "HyperParams",
    "FitConfig",
    "FitResult",
    "FitError",
    "PARAM_NAMES",
    "joint_covariance",
    "marginal_log_likelihood",
    "log_likelihood_and_gradient",
    "default_init_bounds",
    "fit_hyperparameters",
]

LOG_2PI = float(np.log(2.0 * np.pi))

# Canonical parameter layout used by the optimizer and the gradient vector.
PARAM_NAMES = (
    "eta_xi",
    "eta_omega",
    "eta_zeta",
    "theta_xi",
    "theta_omega",
    "theta_zeta",
    "sigma2",
)


class FitError(RuntimeError):
    """Raised when no optimizer restart produced a finite likelihood."""


@dataclass(frozen=True)
class FunctionalSample:
    """Observations of one group: paired times and responses.

    Duplicate times within a group are allowed; the noise model absorbs them.
    """

    group: int
    t: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.group not in (1, 2):
            raise ValueError(f"group must be 1 or 2, got {self.group!r}")
        t = np.atleast_1d(np.asarray(self.t, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if t.shape != y.shape or t.ndim != 1:
            raise ValueError("t and y must be 1-d arrays of equal length")
        if t.size and not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValueError("times and responses must be finite")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.t.size

    @classmethod
    def from_points(cls, group: int, points) -> "FunctionalSample":
        pts = list(points)
        t = np.array([p[0] for p in pts], dtype=float)
        y = np.array([p[1] for p in pts], dtype=float)
        return cls(group=group, t=t, y=y)


@dataclass(frozen=True)
class HyperParams:
    """Full model hyperparameters: kernels for mu and mu_d plus noise."""

    eta: KernelSpec
    theta: KernelSpec
    sigma2: float

    def __post_init__(self):
        if not np.isfinite(self.sigma2) or self.sigma2 <= 0.0:
            raise ValueError(f"sigma2 must be finite and > 0, got {self.sigma2!r}")

    def as_vector(self) -> np.ndarray:
        """Values in the canonical PARAM_NAMES layout."""
        return np.array(
            [
                self.eta.xi,
                self.eta.omega,
                self.eta.zeta,
                self.theta.xi,
                self.theta.omega,
                self.theta.zeta,
                self.sigma2,
            ]
        )

    @classmethod
    def from_vector(cls, v) -> "HyperParams":
        v = np.asarray(v, dtype=float)
        return cls(
            eta=KernelSpec(v[0], v[1], v[2]),
            theta=KernelSpec(v[3], v[4], v[5]),
            sigma2=float(v[6]),
        )


@dataclass(frozen=True)
class FitConfig:
    """Controls for maximum-likelihood hyperparameter estimation.

    Optimization runs over log-parameters, so positivity is automatic.
    ``init_bounds`` maps parameter names to (low, high) sampling ranges for
    the log-uniform restarts; entries override the data-derived defaults.
    ``fit_eta_linear`` / ``fit_theta_linear`` free the corresponding linear
    term; when False the term is frozen at zero.
    """

    restarts: int = 5
    max_iters: int = 500
    rel_tol: float = 1e-6
    seed: int = 0
    fit_eta_linear: bool = False
    fit_theta_linear: bool = False
    init_bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be > 0")


@dataclass(frozen=True)
class FitResult:
    params: HyperParams
    log_likelihood: float
    restart_log_likelihoods: tuple[float, ...]


def _stack(sample1: FunctionalSample, sample2: FunctionalSample):
    if sample1.group == sample2.group:
        raise ValueError("samples must come from different groups")
    if sample1.group == 2:
        sample1, sample2 = sample2, sample1
    t = np.concatenate([sample1.t, sample2.t])
    y = np.concatenate([sample1.y, sample2.y])
    return t, y, sample1.n


class _Workspace:
    """Caches the pairwise pieces every likelihood evaluation reuses."""

    def __init__(self, sample1: FunctionalSample, sample2: FunctionalSample):
        t, y, n1 = _stack(sample1, sample2)
        self.t = t
        self.y = y
        self.n1 = n1
        self.n = t.size
        d = t[:, None] - t[None, :]
        self.d2 = d * d
        self.tt = np.outer(t, t)

    def covariance(self, params: HyperParams):
        """Joint covariance C plus the exponential factors reused by grads."""
        eta, theta, n1 = params.eta, params.theta, self.n1
        e_eta = np.exp(-0.5 * eta.omega * self.d2)
        c = eta.xi * e_eta
        if eta.zeta != 0.0:
            c += eta.zeta * self.tt
        e_theta = np.exp(-0.5 * theta.omega * self.d2[:n1, :n1])
        c[:n1, :n1] += theta.xi * e_theta
        if theta.zeta != 0.0:
            c[:n1, :n1] += theta.zeta * self.tt[:n1, :n1]
        c[np.diag_indices_from(c)] += params.sigma2
        return c, e_eta, e_theta


def joint_covariance(
    params: HyperParams, sample1: FunctionalSample, sample2: FunctionalSample
) -> np.ndarray:
    """Marginal covariance of the stacked responses (group 1 first)."""
    ws = _Workspace(sample1, sample2)
    c, _, _ = ws.covariance(params)
    return c


def _loglik_terms(c: np.ndarray, y: np.ndarray):
    factor, _ = chol_with_jitter(c, name="joint covariance")
    alpha = chol_solve(factor, y)
    value = (
        -0.5 * float(y @ alpha)
        - float(np.sum(np.log(np.diagonal(factor))))
        - 0.5 * y.size * LOG_2PI
    )
    return value, factor, alpha


def marginal_log_likelihood(
    params: HyperParams, sample1: FunctionalSample, sample2: FunctionalSample
) -> float:
    """Log density of the stacked responses under the marginalized model."""
    ws = _Workspace(sample1, sample2)
    c, _, _ = ws.covariance(params)
    value, _, _ = _loglik_terms(c, ws.y)
    return value


def _gradient_log_scale(params: HyperParams, ws: _Workspace, c, e_eta, e_theta, factor, alpha):
    """Gradient of the log likelihood w.r.t. log-parameters (length 7).

    Uses d logL / dC = (alpha alpha' - C^{-1}) / 2 and the chain rule
    d/d log p = p * d/dp; entries for parameters frozen at zero are zero.
    """
    n1 = ws.n1
    g = np.outer(alpha, alpha) - chol_inverse(factor)
    g11 = g[:n1, :n1]
    eta, theta = params.eta, params.theta

    grad = np.zeros(len(PARAM_NAMES))
    grad[0] = 0.5 * eta.xi * float(np.sum(g * e_eta))
    grad[1] = 0.5 * eta.omega * float(np.sum(g * (-0.5 * eta.xi * ws.d2 * e_eta)))
    if eta.zeta != 0.0:
        grad[2] = 0.5 * eta.zeta * float(np.sum(g * ws.tt))
    grad[3] = 0.5 * theta.xi * float(np.sum(g11 * e_theta))
    grad[4] = 0.5 * theta.omega * float(
        np.sum(g11 * (-0.5 * theta.xi * ws.d2[:n1, :n1] * e_theta))
    )
    if theta.zeta != 0.0:
        grad[5] = 0.5 * theta.zeta * float(np.sum(g11 * ws.tt[:n1, :n1]))
    grad[6] = 0.5 * params.sigma2 * float(np.trace(g))
    return grad


def log_likelihood_and_gradient(
    params: HyperParams, sample1: FunctionalSample, sample2: FunctionalSample
) -> tuple[float, np.ndarray]:
    """Marginal log likelihood and its gradient in log-parameter space.

    This is exactly the objective/gradient pair consumed by the optimizer;
    the gradient vector follows the PARAM_NAMES layout.
    """
    ws = _Workspace(sample1, sample2)
    c, e_eta, e_theta = ws.covariance(params)
    value, factor, alpha = _loglik_terms(c, ws.y)
    grad = _gradient_log_scale(params, ws, c, e_eta, e_theta, factor, alpha)
    return value, grad


def default_init_bounds(sample1: FunctionalSample, sample2: FunctionalSample) -> dict:
    """Data-driven log-uniform sampling ranges for optimizer restarts."""
    t, y, _ = _stack(sample1, sample2)
    var_y = max(float(np.var(y)), 1e-12)
    t_range = max(float(np.ptp(t)), 1e-12)
    mean_t2 = max(float(np.mean(t * t)), 1e-12)
    xi = (0.1 * var_y, 10.0 * var_y)
    omega = (0.1 / t_range**2, 100.0 / t_range**2)
    zeta = (1e-6, var_y / mean_t2 + 1e-6)
    return {
        "eta_xi": xi,
        "eta_omega": omega,
        "eta_zeta": zeta,
        "theta_xi": xi,
        "theta_omega": omega,
        "theta_zeta": zeta,
        "sigma2": (0.01 * var_y, var_y),
    }


def _free_indices(config: FitConfig) -> list[int]:
    free = [0, 1]
    if config.fit_eta_linear:
        free.append(2)
    free += [3, 4]
    if config.fit_theta_linear:
        free.append(5)
    free.append(6)
    return free


# Box for the log-parameter search: wide enough to be effectively
# unconstrained while keeping exp() finite during line searches.
LOG_PARAM_BOUND = 46.0


def _params_from_free(x_log: np.ndarray, free: list[int]) -> HyperParams:
    full = np.zeros(len(PARAM_NAMES))
    full[free] = np.exp(x_log)
    return HyperParams.from_vector(full)


def fit_hyperparameters(
    sample1: FunctionalSample,
    sample2: FunctionalSample,
    config: FitConfig | None = None,
    init: HyperParams | None = None,
) -> FitResult:
    """Maximize the marginal likelihood over log-parameters.

    Runs ``config.restarts`` L-BFGS-B ascents from log-uniform random
    initializations (restart 0 starts at ``init`` when given) and returns the
    best.  Ties break toward the earlier restart, so the result is
    deterministic given ``config.seed``.
    """
    config = config or FitConfig()
    if sample1.n < 2 or sample2.n < 2:
        raise ValueError("each sample needs at least 2 points for fitting")
    free = _free_indices(config)
    bounds = dict(default_init_bounds(sample1, sample2))
    bounds.update(config.init_bounds)
    ws = _Workspace(sample1, sample2)

    def objective(x_log):
        try:
            with np.errstate(all="ignore"):
                params = _params_from_free(x_log, free)
                c, e_eta, e_theta = ws.covariance(params)
                value, factor, alpha = _loglik_terms(c, ws.y)
                grad = _gradient_log_scale(params, ws, c, e_eta, e_theta, factor, alpha)
        except (ConditioningError, FloatingPointError, ValueError, np.linalg.LinAlgError):
            return 1e25, np.zeros(len(free))
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            return 1e25, np.zeros(len(free))
        return -value, -grad[free]

    rng = np.random.default_rng(config.seed)
    inits = []
    for r in range(config.restarts):
        if r == 0 and init is not None:
            inits.append(np.log(init.as_vector()[free]))
            continue
        lo = np.log([bounds[PARAM_NAMES[i]][0] for i in free])
        hi = np.log([bounds[PARAM_NAMES[i]][1] for i in free])
        inits.append(rng.uniform(lo, hi))

    box = [(-LOG_PARAM_BOUND, LOG_PARAM_BOUND)] * len(free)
    best_value = -np.inf
    best_x = None
    restart_values = []
    for x0 in inits:
        x0 = np.clip(x0, -LOG_PARAM_BOUND, LOG_PARAM_BOUND)
        f0, _ = objective(x0)
        res = minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=box,
            options={"maxiter": config.max_iters, "ftol": config.rel_tol},
        )
        # L-BFGS-B reports its best iterate, but guard against a line search
        # that never improved on the start.
        x_final, f_final = (res.x, res.fun) if res.fun <= f0 else (x0, f0)
        value = -float(f_final)
        restart_values.append(value if value > -1e24 else -np.inf)
        if restart_values[-1] > best_value:
            best_value = restart_values[-1]
            best_x = x_final
    if best_x is None or not np.isfinite(best_value):
        raise FitError(
            "no restart produced a finite likelihood; "
            f"restart log-likelihoods: {restart_values}"
        )
    return FitResult(
        params=_params_from_free(best_x, free),
        log_likelihood=best_value,
        restart_log_likelihoods=tuple(restart_values),
    )
