"""Decision rules with directional false discovery rate control.

Two families of procedures act on the per-point state probabilities
(s0, s1, s2):

* threshold rules parameterized by a cost ratio ``lam`` (``oracle_rule_I``
  and ``oracle_rule_I_III``), which minimize the posterior risk of the
  corresponding weighted classification loss, and
* step-down procedures (``decide_fdr_I``, ``decide_fdr_I_III``) that sort a
  per-point error statistic ascending and reject the largest prefix whose
  running mean stays at or below the nominal level ``alpha``.

The same template with statistic ``1 - s0`` declares practical equivalence
(``decide_equivalence``).  Directional Benjamini-Hochberg / Benjamini-
Yekutieli step-up baselines over interval-null p-values are included for
comparison studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .posterior import PredictionGrid, StateProbs

__all__ = [
    "Area",
    "ErrorEstimates",
    "DecisionSet",
    "EquivalenceEstimates",
    "EquivalenceDecisionSet",
    "oracle_rule_I",
    "oracle_rule_I_III",
    "decide_fdr_I",
    "decide_fdr_I_III",
    "estimate_error_rates",
    "decide_equivalence",
    "interval_null_pvalues",
    "directional_bh",
    "extract_areas",
]


@dataclass(frozen=True)
class Area:
    """A maximal run of equal decision labels, as a closed time interval."""

    lo: float
    hi: float
    label: int


@dataclass(frozen=True)
class ErrorEstimates:
    """Posterior plug-in error-rate estimates for a decision set."""

    mfdr_i: float
    mfdr_iii: float
    mfdr_i_iii: float
    mfndr: float


@dataclass(frozen=True)
class DecisionSet:
    """Outcome of a directional test: labels in {0, 1, 2} per grid point."""

    grid: PredictionGrid
    labels: np.ndarray
    lambda_star: float | None
    alpha: float
    estimates: ErrorEstimates
    areas: tuple[Area, ...]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        if labels.shape != (self.grid.n_cells,):
            raise ValueError("labels must match the grid size")
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class EquivalenceEstimates:
    mfdr_e: float
    mfndr_e_ii: float
    mfndr_e_iii: float


@dataclass(frozen=True)
class EquivalenceDecisionSet:
    """Outcome of an equivalence test: labels in {1, 2, 3} per grid point."""

    grid: PredictionGrid
    labels: np.ndarray
    alpha: float
    estimates: EquivalenceEstimates
    areas: tuple[Area, ...]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        if labels.shape != (self.grid.n_cells,):
            raise ValueError("labels must match the grid size")
        object.__setattr__(self, "labels", labels)


def _check_lambda(lam: float):
    if not np.isfinite(lam) or lam <= 0:
        raise ValueError(f"lambda must be finite and > 0, got {lam!r}")


def oracle_rule_I(probs: StateProbs, lam: float) -> np.ndarray:
    """Threshold rule optimal for Type I cost ``lam`` per unit of error mass.

    Label 2 where s2/s0 > lam and s2 > s1; label 1 where s1/s0 > lam and
    s2 <= s1; 0 otherwise.  Comparisons are done in product form
    (``s_k > lam * s0``) so that s0 = 0 with a positive numerator behaves as
    an infinite ratio.
    """
    _check_lambda(lam)
    s0, s1, s2 = probs.s0, probs.s1, probs.s2
    labels = np.zeros(s0.size, dtype=int)
    pick2 = s2 > s1
    labels[pick2 & (s2 > lam * s0)] = 2
    labels[~pick2 & (s1 > lam * s0)] = 1
    return labels


def oracle_rule_I_III(probs: StateProbs, lam: float) -> np.ndarray:
    """Threshold rule optimal for combined Type I + III cost ``lam``.

    Label k in {1, 2} where (1 - s0)/(1 - s_k) > lam and s_k carries the
    larger alternative mass; ties between s1 and s2 resolve to label 1.
    """
    _check_lambda(lam)
    s0, s1, s2 = probs.s0, probs.s1, probs.s2
    not_null = 1.0 - s0
    labels = np.zeros(s0.size, dtype=int)
    pick2 = s2 > s1
    labels[pick2 & (not_null > lam * (1.0 - s2))] = 2
    labels[~pick2 & (not_null > lam * (1.0 - s1))] = 1
    return labels


def _prefix_cut(stat: np.ndarray, alpha: float) -> tuple[int, np.ndarray]:
    """Largest prefix of the ascending-sorted statistic with mean <= alpha.

    Returns (r_star, order) where ``order`` sorts ``stat`` ascending with
    ties broken by original index (stable sort).
    """
    order = np.argsort(stat, kind="stable")
    prefix_means = np.cumsum(stat[order]) / np.arange(1, stat.size + 1)
    qualifying = np.nonzero(prefix_means <= alpha)[0]
    r_star = int(qualifying[-1]) + 1 if qualifying.size else 0
    return r_star, order

def _check_alpha(alpha: float):
    if not (0 < alpha < 1) and alpha != 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha!r}")


def _directions(s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
    """Declared direction per point: 2 where s2 > s1, else 1 (tie -> 1)."""
    return np.where(s2 > s1, 2, 1)


def decide_fdr_I(probs: StateProbs, alpha: float) -> DecisionSet:
    """Step-down procedure controlling the Type I directional FDR.

    Sorts s0 ascending and rejects the largest prefix whose running mean is
    at or below ``alpha``; each rejected point is labeled with its dominant
    direction.  ``lambda_star`` is reported so that the equivalent threshold
    form rejects exactly where ``s0 <= 1 / (1 + lambda_star)``; it is None
    when nothing is rejected.
    """
    _check_alpha(alpha)
    s0 = probs.s0
    r_star, order = _prefix_cut(s0, alpha)
    labels = np.zeros(s0.size, dtype=int)
    lambda_star = None
    if r_star > 0:
        rejected = order[:r_star]
        labels[rejected] = _directions(probs.s1, probs.s2)[rejected]
        boundary = float(s0[order[r_star - 1]])
        lambda_star = np.inf if boundary == 0.0 else (1.0 - boundary) / boundary
    estimates = estimate_error_rates(probs, labels)
    return DecisionSet(
        grid=probs.grid,
        labels=labels,
        lambda_star=lambda_star,
        alpha=alpha,
        estimates=estimates,
        areas=extract_areas(labels, probs.grid),
    )


def decide_fdr_I_III(probs: StateProbs, alpha: float) -> DecisionSet:
    """Step-down procedure controlling the combined Type I + III FDR.

    The per-point statistic is q = 1 - s_khat, the posterior probability
    that labeling the point with its dominant direction khat is an error of
    either kind.  Same prefix search as :func:`decide_fdr_I`.
    """
    _check_alpha(alpha)
    directions = _directions(probs.s1, probs.s2)
    s_dominant = np.where(directions == 2, probs.s2, probs.s1)
    q = 1.0 - s_dominant
    r_star, order = _prefix_cut(q, alpha)
    labels = np.zeros(q.size, dtype=int)
    lambda_star = None
    if r_star > 0:
        rejected = order[:r_star]
        labels[rejected] = directions[rejected]
        boundary = float(q[order[r_star - 1]])
        lambda_star = np.inf if boundary == 0.0 else (1.0 - boundary) / boundary
    estimates = estimate_error_rates(probs, labels)
    return DecisionSet(
        grid=probs.grid,
        labels=labels,
        lambda_star=lambda_star,
        alpha=alpha,
        estimates=estimates,
        areas=extract_areas(labels, probs.grid),
    )


def estimate_error_rates(probs: StateProbs, labels) -> ErrorEstimates:
    """Posterior plug-in estimates of the directional error rates.

    Averages over the rejected set for the discovery rates and over the
    accepted set for the nondiscovery rate; empty sets give 0.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.shape != probs.s0.shape:
        raise ValueError("labels must match the state probability vectors")
    rejected = labels != 0
    r = int(np.count_nonzero(rejected))
    n_accept = labels.size - r
    if r > 0:
        mfdr_i = float(np.sum(probs.s0[rejected])) / r
        wrong_dir = np.where(labels == 1, probs.s2, probs.s1)
        mfdr_iii = float(np.sum(wrong_dir[rejected])) / r
    else:
        mfdr_i = 0.0
        mfdr_iii = 0.0
    if n_accept > 0:
        mfndr = float(np.sum(1.0 - probs.s0[~rejected])) / n_accept
    else:
        mfndr = 0.0
    return ErrorEstimates(
        mfdr_i=mfdr_i,
        mfdr_iii=mfdr_iii,
        mfdr_i_iii=mfdr_i + mfdr_iii,
        mfndr=mfndr,
    )


def decide_equivalence(probs: StateProbs, alpha: float) -> EquivalenceDecisionSet:
    """Step-down declaration of practical equivalence.

    ``probs`` must be computed with the equivalence margin as ``delta``.
    The statistic is 1 - s0, the posterior probability that a point is NOT
    equivalent; the largest prefix with running mean <= alpha is declared
    equivalent (label 3).  Remaining points keep a directional label:
    2 where s2 >= s1, else 1.
    """
    _check_alpha(alpha)
    stat = 1.0 - probs.s0
    r_star, order = _prefix_cut(stat, alpha)
    labels = np.where(probs.s2 >= probs.s1, 2, 1)
    declared = np.zeros(stat.size, dtype=bool)
    if r_star > 0:
        declared[order[:r_star]] = True
        labels = np.where(declared, 3, labels)
    n_declared = int(np.count_nonzero(declared))
    n_other = labels.size - n_declared
    mfdr_e = float(np.sum(stat[declared])) / n_declared if n_declared else 0.0
    if n_other:
        mfndr_e_ii = float(np.sum(probs.s0[~declared])) / n_other
        wrong_dir = np.where(labels == 1, probs.s2, probs.s1)
        mfndr_e_iii = float(np.sum(wrong_dir[~declared])) / n_other
    else:
        mfndr_e_ii = 0.0
        mfndr_e_iii = 0.0
    return EquivalenceDecisionSet(
        grid=probs.grid,
        labels=labels,
        alpha=alpha,
        estimates=EquivalenceEstimates(mfdr_e, mfndr_e_ii, mfndr_e_iii),
        areas=extract_areas(labels, probs.grid, null_label=None),
    )


def interval_null_pvalues(diffs, se: float, delta: float):
    """Two-sided p-values for the interval null ``|difference| <= delta``.

    p+ tests against the upper alternative, p- against the lower; the
    reported p-value is ``min(1, 2 min(p+, p-))``.  Returns (pvalues, signs).
    """
    if se <= 0:
        raise ValueError("se must be > 0")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    d = np.atleast_1d(np.asarray(diffs, dtype=float))
    p_upper = ndtr(-(d - delta) / se)
    p_lower = ndtr((d + delta) / se)
    pvalues = np.minimum(1.0, 2.0 * np.minimum(p_upper, p_lower))
    return pvalues, np.sign(d)


def directional_bh(pvalues, signs, alpha: float, variant: str = "bh") -> np.ndarray:
    """Directional step-up baseline over per-point p-values.

    ``variant="bh"`` uses thresholds k * alpha / m; ``variant="by"`` divides
    alpha by the harmonic number H_m.  Rejected points are labeled by the
    sign of the observed difference (2 for positive, 1 otherwise).
    """
    _check_alpha(alpha)
    p = np.atleast_1d(np.asarray(pvalues, dtype=float))
    signs = np.atleast_1d(np.asarray(signs, dtype=float))
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    if variant not in ("bh", "by"):
        raise ValueError(f"variant must be 'bh' or 'by', got {variant!r}")
    m = p.size
    level = alpha / np.sum(1.0 / np.arange(1, m + 1)) if variant == "by" else alpha
    order = np.argsort(p, kind="stable")
    thresholds = np.arange(1, m + 1) * level / m
    qualifying = np.nonzero(p[order] <= thresholds)[0]
    labels = np.zeros(m, dtype=int)
    if qualifying.size:
        k = int(qualifying[-1]) + 1
        rejected = order[:k]
        labels[rejected] = np.where(signs[rejected] > 0, 2, 1)
    return labels


def extract_areas(labels, grid: PredictionGrid, null_label: int | None = 0):
    """Merge maximal runs of equal labels into closed intervals.

    Runs whose label equals ``null_label`` are dropped; pass ``None`` to
    keep every label (equivalence decisions report all three).  Interval
    endpoints are the cell boundaries of the grid.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (grid.n_cells,):
        raise ValueError("labels must match the grid size")
    edges = grid.cell_edges
    areas = []
    start = 0
    for i in range(1, labels.size + 1):
        if i == labels.size or labels[i] != labels[start]:
            if null_label is None or labels[start] != null_label:
                areas.append(
                    Area(lo=float(edges[start]), hi=float(edges[i]), label=int(labels[start]))
                )
            start = i
    return tuple(areas)
