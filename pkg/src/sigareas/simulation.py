"""Synthetic data generators and replication studies.

Two sampling designs are provided:

* ``example1``: both groups observed at the same uniformly drawn times and
  hypotheses tested at exactly those times (n1 = n2 = number of tests);
* ``example2``: irregular, partially overlapping times per group, with
  hypotheses tested at the centers of a fresh regular grid.

Truth is bookkept against the same joint draw of the difference curve that
generated the data, so decisions at unobserved test points are scored
coherently.  ``run_study`` repeats simulate -> fit -> posterior -> decide ->
score over independent replicates and aggregates realized error rates next
to the procedure's own estimates.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from .decision import (
    DecisionSet,
    ErrorEstimates,
    decide_fdr_I,
    decide_fdr_I_III,
    directional_bh,
    interval_null_pvalues,
)
from .gpr import FitConfig, FunctionalSample, HyperParams, fit_hyperparameters
from .kernels import KernelSpec, gram_matrix
from .linalg import sampling_factor
from .posterior import PredictionGrid, posterior_difference, state_probs_closed_form

__all__ = [
    "Scenario",
    "TruthAssignment",
    "MetricsRecord",
    "ReplicateOutcome",
    "ProcedureSummary",
    "StudyResult",
    "StudyError",
    "PROCEDURES",
    "example1_scenario",
    "example2_scenario",
    "simulate_dataset",
    "decision_grid",
    "evaluate_decisions",
    "run_study",
    "write_study_csv",
    "STUDY_CSV_COLUMNS",
]

PROCEDURES = ("fdr1", "fdr13", "bh", "by")


class StudyError(RuntimeError):
    """Raised when too many replicates of a study fail."""


@dataclass(frozen=True)
class Scenario:
    """Ground-truth configuration of one simulation design."""

    design: str  # "example1" or "example2"
    n1: int
    n2: int
    n_grid: int
    domain: tuple[float, float]
    kappa_spec: KernelSpec
    gamma_spec: KernelSpec
    sigma2_true: float
    delta: float
    overlap_frac: float = 0.2

    def __post_init__(self):
        if self.design not in ("example1", "example2"):
            raise ValueError(f"unknown design {self.design!r}")
        if not (0.0 <= self.overlap_frac <= 1.0):
            raise ValueError("overlap_frac must lie in [0, 1]")
        if self.design == "example1" and self.n_grid != self.n1:
            raise ValueError("example1 tests at the shared times, so n_grid must equal n1")
        if self.sigma2_true <= 0:
            raise ValueError("sigma2_true must be > 0")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")

    @property
    def n_overlap(self) -> int:
        return int(round(self.overlap_frac * self.n1))


def example1_scenario(
    omega: float = 80.0,
    n: int = 500,
    delta: float = 0.80,
    domain: tuple[float, float] = (6.0, 13.0),
    gamma_xi: float = 10.0,
    sigma2: float = 1.0,
) -> Scenario:
    """Shared-times design: stationary kernels, tests at the observed times."""
    return Scenario(
        design="example1",
        n1=n,
        n2=n,
        n_grid=n,
        domain=domain,
        kappa_spec=KernelSpec(3.0, 2.0, 0.0),
        gamma_spec=KernelSpec(gamma_xi, omega, 0.0),
        sigma2_true=sigma2,
        delta=delta,
        overlap_frac=1.0,
    )


def example2_scenario(
    omega: float = 20.0,
    n1: int = 200,
    n2: int = 200,
    n_grid: int = 500,
    overlap_frac: float = 0.2,
    delta: float = 0.80,
    domain: tuple[float, float] = (6.0, 13.0),
    gamma_xi: float = 10.0,
    sigma2: float = 1.0,
) -> Scenario:
    """Disjoint-with-overlap design: nonstationary shared-curve kernel."""
    return Scenario(
        design="example2",
        n1=n1,
        n2=n2,
        n_grid=n_grid,
        domain=domain,
        kappa_spec=KernelSpec(3.0, 2.0, 3.0),
        gamma_spec=KernelSpec(gamma_xi, omega, 0.0),
        sigma2_true=sigma2,
        delta=delta,
        overlap_frac=overlap_frac,
    )


@dataclass(frozen=True)
class TruthAssignment:
    """True difference values and hypothesis states at the test points."""

    points: np.ndarray
    mu_d_true: np.ndarray
    z_true: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z_true, dtype=int)
        object.__setattr__(self, "z_true", z)


def _draw_gp(spec: KernelSpec, times: np.ndarray, rng) -> np.ndarray:
    factor = sampling_factor(gram_matrix(spec, times), name="truth gram")
    return factor @ rng.standard_normal(times.size)


def simulate_dataset(scenario: Scenario, seed):
    """One dataset plus its truth assignment, deterministic given the seed.

    The shared curve is drawn jointly over every observation time and the
    difference curve jointly over the union of group-1 times and test
    points, so observed responses and truth labels come from one sample
    path.  Draw order is fixed: times, shared curve, difference curve,
    group-1 noise, group-2 noise.
    """
    rng = np.random.default_rng(seed)
    lo, hi = scenario.domain
    if scenario.design == "example1":
        t1 = np.sort(rng.uniform(lo, hi, scenario.n1))
        t2 = t1
        test_points = t1
    else:
        shared = rng.uniform(lo, hi, scenario.n_overlap)
        extra1 = rng.uniform(lo, hi, scenario.n1 - scenario.n_overlap)
        extra2 = rng.uniform(lo, hi, scenario.n2 - scenario.n_overlap)
        t1 = np.sort(np.concatenate([shared, extra1]))
        t2 = np.sort(np.concatenate([shared, extra2]))
        test_points = PredictionGrid.regular(lo, hi, scenario.n_grid).points

    # Joint draw of mu over the deduplicated union of observation times so
    # shared times get identical values in both groups.
    obs_times, obs_inverse = np.unique(np.concatenate([t1, t2]), return_inverse=True)
    mu_obs = _draw_gp(scenario.kappa_spec, obs_times, rng)
    mu1 = mu_obs[obs_inverse[: scenario.n1]]
    mu2 = mu_obs[obs_inverse[scenario.n1 :]]

    diff_times, diff_inverse = np.unique(
        np.concatenate([t1, test_points]), return_inverse=True
    )
    mu_d_all = _draw_gp(scenario.gamma_spec, diff_times, rng)
    mu_d1 = mu_d_all[diff_inverse[: scenario.n1]]
    mu_d_star = mu_d_all[diff_inverse[scenario.n1 :]]

    noise_sd = np.sqrt(scenario.sigma2_true)
    y1 = mu1 + mu_d1 + rng.normal(0.0, noise_sd, scenario.n1)
    y2 = mu2 + rng.normal(0.0, noise_sd, scenario.n2)

    z_true = np.zeros(test_points.size, dtype=int)
    z_true[mu_d_star < -scenario.delta] = 1
    z_true[mu_d_star > scenario.delta] = 2
    truth = TruthAssignment(points=test_points, mu_d_true=mu_d_star, z_true=z_true)
    return (
        FunctionalSample(group=1, t=t1, y=y1),
        FunctionalSample(group=2, t=t2, y=y2),
        truth,
    )


def decision_grid(scenario: Scenario, sample1: FunctionalSample) -> PredictionGrid:
    """Grid the decisions run on: observed times (example1) or cell centers."""
    lo, hi = scenario.domain
    if scenario.design == "example1":
        return PredictionGrid.from_points(sample1.t, t_lo=lo, t_hi=hi)
    return PredictionGrid.regular(lo, hi, scenario.n_grid)


@dataclass(frozen=True)
class MetricsRecord:
    """Realized per-replicate error metrics against the truth assignment.

    ``v_counts[j, k]`` counts test points with true state j decided as k.
    The modified-power masses carry the numerator (missed or misdirected
    alternative mass) and denominator (total alternative mass) separately so
    studies can aggregate them as a ratio of sums.
    """

    v_counts: np.ndarray
    cell_measure: float
    fdp_i: float
    fdp_i_iii: float
    fndp: float
    mp_miss_mass: float
    mp_alt_mass: float

    @property
    def n(self) -> int:
        return int(self.v_counts.sum())


def evaluate_decisions(truth: TruthAssignment, labels, grid: PredictionGrid) -> MetricsRecord:
    """Cross-tabulate decisions against truth and form realized rates.

    Empty rejected or accepted sets contribute 0 to the corresponding rate.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.shape != truth.z_true.shape or grid.n_cells != labels.size:
        raise ValueError("truth, labels and grid must share one length")
    v = np.zeros((3, 3), dtype=int)
    np.add.at(v, (truth.z_true, labels), 1)
    n = labels.size
    rejected = int(v[:, 1].sum() + v[:, 2].sum())
    accepted = n - rejected
    type_i = int(v[0, 1] + v[0, 2])
    type_iii = int(v[1, 2] + v[2, 1])
    type_ii = int(v[1, 0] + v[2, 0])
    cell = (grid.t_hi - grid.t_lo) / n
    return MetricsRecord(
        v_counts=v,
        cell_measure=cell,
        fdp_i=type_i / rejected if rejected else 0.0,
        fdp_i_iii=(type_i + type_iii) / rejected if rejected else 0.0,
        fndp=type_ii / accepted if accepted else 0.0,
        mp_miss_mass=(type_ii + type_iii) * cell,
        mp_alt_mass=int(v[1].sum() + v[2].sum()) * cell,
    )


@dataclass(frozen=True)
class ReplicateOutcome:
    """Everything recorded for one successful replicate."""

    seed: int
    theta_hat: HyperParams
    metrics: dict
    labels: dict
    estimates: dict


@dataclass(frozen=True)
class ProcedureSummary:
    procedure: str
    reps_used: int
    failures: int
    fdp_i_mean: float
    fdp_i_sd: float
    fdp_i_iii_mean: float
    fdp_i_iii_sd: float
    fndp_mean: float
    fndp_sd: float
    mp: float
    est_mfdr_i_mean: float = float("nan")
    est_mfdr_i_sd: float = float("nan")
    est_mfdr_iii_mean: float = float("nan")
    est_mfdr_iii_sd: float = float("nan")
    est_mfdr_i_iii_mean: float = float("nan")
    est_mfdr_i_iii_sd: float = float("nan")
    est_mfndr_mean: float = float("nan")
    est_mfndr_sd: float = float("nan")


@dataclass(frozen=True)
class StudyResult:
    scenario: Scenario
    alpha: float
    seed: int
    reps: int
    failures: int
    failure_messages: tuple[str, ...]
    replicates: tuple[ReplicateOutcome, ...]
    summaries: dict = field(default_factory=dict)


def _replicate_seeds(seed: int, reps: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(child.generate_state(1)[0]) for child in ss.spawn(reps)]


def _run_replicate(args):
    (
        scenario,
        rep_seed,
        alpha,
        procedures,
        use_true_theta,
        fit_config,
        baseline_known_sigma,
        limit_threads,
    ) = args
    if limit_threads:
        try:
            from threadpoolctl import threadpool_limits

            threadpool_limits(limits=1)
        except ImportError:
            pass
    try:
        sample1, sample2, truth = simulate_dataset(scenario, rep_seed)
        # Center both groups by the pooled response mean, mirroring the
        # data-analysis pipeline; a common shift lives in mu only.
        pooled = float(np.mean(np.concatenate([sample1.y, sample2.y])))
        sample1 = FunctionalSample(group=1, t=sample1.t, y=sample1.y - pooled)
        sample2 = FunctionalSample(group=2, t=sample2.t, y=sample2.y - pooled)
        grid = decision_grid(scenario, sample1)

        if use_true_theta:
            theta_hat = HyperParams(
                eta=scenario.kappa_spec,
                theta=scenario.gamma_spec,
                sigma2=scenario.sigma2_true,
            )
        else:
            theta_hat = fit_hyperparameters(sample1, sample2, fit_config).params

        needs_posterior = any(p in ("fdr1", "fdr13") for p in procedures)
        probs = None
        if needs_posterior:
            post = posterior_difference(theta_hat, sample1, sample2, grid)
            probs = state_probs_closed_form(post, scenario.delta)

        metrics, labels, estimates = {}, {}, {}
        for proc in procedures:
            if proc == "fdr1":
                decision = decide_fdr_I(probs, alpha)
                labels[proc] = decision.labels
                estimates[proc] = decision.estimates
            elif proc == "fdr13":
                decision = decide_fdr_I_III(probs, alpha)
                labels[proc] = decision.labels
                estimates[proc] = decision.estimates
            elif proc in ("bh", "by"):
                if scenario.design != "example1":
                    raise ValueError(
                        "directional BH/BY baselines need the paired example1 design"
                    )
                diffs = sample1.y - sample2.y
                sigma2 = (
                    scenario.sigma2_true if baseline_known_sigma else theta_hat.sigma2
                )
                pvals, signs = interval_null_pvalues(
                    diffs, float(np.sqrt(2.0 * sigma2)), scenario.delta
                )
                labels[proc] = directional_bh(pvals, signs, alpha, variant=proc)
                estimates[proc] = None
            else:
                raise ValueError(f"unknown procedure {proc!r}")
            metrics[proc] = evaluate_decisions(truth, labels[proc], grid)
        return ReplicateOutcome(
            seed=rep_seed,
            theta_hat=theta_hat,
            metrics=metrics,
            labels=labels,
            estimates=estimates,
        )
    except Exception as exc:  # failures are counted by the caller
        return f"{type(exc).__name__}: {exc}"


def _mean_sd(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), sd


def _summarize(procedure: str, outcomes, failures: int) -> ProcedureSummary:
    records = [o.metrics[procedure] for o in outcomes]
    fdp_i_mean, fdp_i_sd = _mean_sd([r.fdp_i for r in records])
    fdp_i3_mean, fdp_i3_sd = _mean_sd([r.fdp_i_iii for r in records])
    fndp_mean, fndp_sd = _mean_sd([r.fndp for r in records])
    miss = sum(r.mp_miss_mass for r in records)
    alt = sum(r.mp_alt_mass for r in records)
    mp = 1.0 - miss / alt if alt > 0 else float("nan")
    extra = {}
    ests = [o.estimates[procedure] for o in outcomes]
    if ests and isinstance(ests[0], ErrorEstimates):
        for name in ("mfdr_i", "mfdr_iii", "mfdr_i_iii", "mfndr"):
            mean, sd = _mean_sd([getattr(e, name) for e in ests])
            extra[f"est_{name}_mean"] = mean
            extra[f"est_{name}_sd"] = sd
    return ProcedureSummary(
        procedure=procedure,
        reps_used=len(outcomes),
        failures=failures,
        fdp_i_mean=fdp_i_mean,
        fdp_i_sd=fdp_i_sd,
        fdp_i_iii_mean=fdp_i3_mean,
        fdp_i_iii_sd=fdp_i3_sd,
        fndp_mean=fndp_mean,
        fndp_sd=fndp_sd,
        mp=mp,
        **extra,
    )


def run_study(
    scenario: Scenario,
    reps: int,
    alpha: float,
    procedures=("fdr1",),
    seed: int = 0,
    use_true_theta: bool = False,
    fit_config: FitConfig | None = None,
    baseline_known_sigma: bool = False,
    n_jobs: int = 1,
) -> StudyResult:
    """Replicate the full pipeline and aggregate realized and estimated rates.

    All requested procedures are evaluated on the same replicates (matched
    seeds, one shared fit), so between-procedure comparisons are paired.
    Replicates whose fit or factorization fails are excluded and counted;
    the study aborts if more than 10% fail.  Results are identical for any
    ``n_jobs`` because per-replicate seeds are pre-derived and aggregation
    runs in replicate order.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if isinstance(procedures, str):
        procedures = (procedures,)
    procedures = tuple(procedures)
    for proc in procedures:
        if proc not in PROCEDURES:
            raise ValueError(f"unknown procedure {proc!r}")
    fit_config = fit_config or FitConfig()
    parallel = n_jobs > 1 and reps > 1
    tasks = [
        (
            scenario,
            rep_seed,
            alpha,
            procedures,
            use_true_theta,
            fit_config,
            baseline_known_sigma,
            parallel,  # workers limit their BLAS to one thread
        )
        for rep_seed in _replicate_seeds(seed, reps)
    ]
    if parallel:
        with ProcessPoolExecutor(
            max_workers=min(n_jobs, reps), mp_context=get_context("fork")
        ) as pool:
            raw = list(pool.map(_run_replicate, tasks))
    else:
        raw = [_run_replicate(task) for task in tasks]

    outcomes = [r for r in raw if isinstance(r, ReplicateOutcome)]
    messages = tuple(r for r in raw if isinstance(r, str))
    failures = len(messages)
    if failures > 0.10 * reps:
        raise StudyError(
            f"{failures}/{reps} replicates failed; first failure: {messages[0]}"
        )
    summaries = {proc: _summarize(proc, outcomes, failures) for proc in procedures}
    return StudyResult(
        scenario=scenario,
        alpha=alpha,
        seed=seed,
        reps=reps,
        failures=failures,
        failure_messages=messages,
        replicates=tuple(outcomes),
        summaries=summaries,
    )


STUDY_CSV_COLUMNS = (
    "design",
    "omega",
    "delta",
    "alpha",
    "procedure",
    "reps",
    "reps_used",
    "failures",
    "fdp_i_mean",
    "fdp_i_sd",
    "fdp_i_iii_mean",
    "fdp_i_iii_sd",
    "fndp_mean",
    "fndp_sd",
    "mp",
    "est_mfdr_i_mean",
    "est_mfdr_i_sd",
    "est_mfdr_iii_mean",
    "est_mfdr_iii_sd",
    "est_mfdr_i_iii_mean",
    "est_mfdr_i_iii_sd",
    "est_mfndr_mean",
    "est_mfndr_sd",
)


def write_study_csv(results, path):
    """Serialize study summaries, one row per scenario x procedure."""
    if isinstance(results, StudyResult):
        results = [results]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(STUDY_CSV_COLUMNS)
        for result in results:
            for proc in result.summaries:
                s = result.summaries[proc]
                writer.writerow(
                    [
                        result.scenario.design,
                        f"{result.scenario.gamma_spec.omega:.10g}",
                        f"{result.scenario.delta:.10g}",
                        f"{result.alpha:.10g}",
                        proc,
                        result.reps,
                        s.reps_used,
                        s.failures,
                    ]
                    + [
                        f"{getattr(s, col):.10g}"
                        for col in STUDY_CSV_COLUMNS[8:]
                    ]
                )
