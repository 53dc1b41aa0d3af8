"""Two-sample functional data testing with directional FDR control.

Fits a Gaussian process regression model to two groups of (time, response)
observations, forms the posterior of the between-group difference curve on a
prediction grid, and applies step-down multiple testing procedures that
control directional false discovery rates.  Also provides equivalence
declarations, directional BH/BY baselines, and a simulation study harness.
"""

from .decision import (
    Area,
    DecisionSet,
    EquivalenceDecisionSet,
    EquivalenceEstimates,
    ErrorEstimates,
    decide_equivalence,
    decide_fdr_I,
    decide_fdr_I_III,
    directional_bh,
    estimate_error_rates,
    extract_areas,
    interval_null_pvalues,
    oracle_rule_I,
    oracle_rule_I_III,
)
from .gpr import (
    FitConfig,
    FitError,
    FitResult,
    FunctionalSample,
    HyperParams,
    fit_hyperparameters,
    joint_covariance,
    log_likelihood_and_gradient,
    marginal_log_likelihood,
)
from .kernels import KernelSpec, cross_gram, gram_matrix, kernel_eval
from .linalg import ConditioningError
from .posterior import (
    PosteriorDifference,
    PredictionGrid,
    StateProbs,
    posterior_difference,
    posterior_difference_factored,
    posterior_mean_mu,
    sample_posterior,
    state_probs_closed_form,
    state_probs_monte_carlo,
)
from .simulation import (
    MetricsRecord,
    Scenario,
    StudyError,
    StudyResult,
    TruthAssignment,
    evaluate_decisions,
    example1_scenario,
    example2_scenario,
    run_study,
    simulate_dataset,
    write_study_csv,
)

__version__ = "0.1.0"
