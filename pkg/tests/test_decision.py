import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigareas.decision import (
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
from sigareas.posterior import PredictionGrid, StateProbs


def make_probs(s0, s1, s2, delta=0.8, domain=(0.0, 1.0)):
    s0 = np.asarray(s0, dtype=float)
    grid = PredictionGrid.regular(domain[0], domain[1], s0.size)
    return StateProbs(grid=grid, s0=s0, s1=np.asarray(s1, float), s2=np.asarray(s2, float), delta=delta)


def random_probs(rng, n):
    raw = rng.dirichlet(np.ones(3), size=n)
    return make_probs(raw[:, 0], raw[:, 1], raw[:, 2])


# ---------------------------------------------------------------- oracle rules


def test_oracle_rule_I_huge_lambda_accepts_everywhere():
    rng = np.random.default_rng(0)
    probs = random_probs(rng, 20)
    assert np.all(oracle_rule_I(probs, 1e12) == 0)


def test_oracle_rule_I_tiny_lambda_rejects_everywhere():
    rng = np.random.default_rng(1)
    raw = rng.dirichlet(np.ones(3), size=20)
    raw = np.clip(raw, 1e-3, None)
    raw /= raw.sum(axis=1, keepdims=True)
    probs = make_probs(raw[:, 0], raw[:, 1], raw[:, 2])
    assert np.all(oracle_rule_I(probs, 1e-12) != 0)


def test_oracle_rule_I_direct_case():
    probs = make_probs([0.2], [0.3], [0.5])
    assert oracle_rule_I(probs, 2.0)[0] == 2


def test_oracle_rule_I_III_tie_goes_to_label_one():
    probs = make_probs([0.1], [0.45], [0.45])
    assert oracle_rule_I_III(probs, 1.5)[0] == 1


def test_oracle_rule_I_III_pure_null_never_rejected():
    probs = make_probs([1.0], [0.0], [0.0])
    for lam in (1e-6, 1.0, 1e6):
        assert oracle_rule_I_III(probs, lam)[0] == 0


def posterior_risk(labels, s0, s1, s2, lam1, lam2, lam3):
    """Expected loss of a label vector: brute-force companion to the rules."""
    cost0 = lam2 * (s1 + s2)
    cost1 = lam1 * s0 + lam3 * s2
    cost2 = lam1 * s0 + lam3 * s1
    table = np.stack([cost0, cost1, cost2])
    return float(table[labels, np.arange(len(labels))].sum())


@pytest.mark.parametrize("rule_name", ["I", "I_III"])
def test_rules_minimize_posterior_risk_by_enumeration(rule_name):
    rng = np.random.default_rng(99)
    n = 4
    all_labelings = list(itertools.product((0, 1, 2), repeat=n))
    for _ in range(200):
        raw = rng.dirichlet(np.ones(3) * rng.uniform(0.3, 3.0), size=n)
        probs = make_probs(raw[:, 0], raw[:, 1], raw[:, 2])
        lam = float(rng.uniform(0.05, 20.0))
        if rule_name == "I":
            labels = oracle_rule_I(probs, lam)
            weights = (lam, 1.0, 1.0)
        else:
            labels = oracle_rule_I_III(probs, lam)
            weights = (lam, 1.0, lam)
        achieved = posterior_risk(labels, probs.s0, probs.s1, probs.s2, *weights)
        best = min(
            posterior_risk(np.array(lab), probs.s0, probs.s1, probs.s2, *weights)
            for lab in all_labelings
        )
        assert achieved == best


# ---------------------------------------------------------------- step-down


def test_decide_fdr_I_prefix_example():
    probs = make_probs([0.01, 0.05, 0.20, 0.60], [0.6, 0.6, 0.5, 0.2], [0.39, 0.35, 0.3, 0.2])
    decision = decide_fdr_I(probs, alpha=0.1)
    assert np.count_nonzero(decision.labels) == 3
    assert np.all(decision.labels[:3] != 0) and decision.labels[3] == 0


def test_decide_fdr_I_no_rejections_on_flat_half():
    probs = make_probs([0.5] * 6, [0.25] * 6, [0.25] * 6)
    decision = decide_fdr_I(probs, alpha=0.1)
    assert np.all(decision.labels == 0)
    assert decision.lambda_star is None
    assert decision.estimates.mfdr_i == 0.0
    assert decision.estimates.mfndr == pytest.approx(0.5)


def test_decide_fdr_I_alpha_one_rejects_all():
    rng = np.random.default_rng(3)
    probs = random_probs(rng, 15)
    decision = decide_fdr_I(probs, alpha=1.0)
    assert np.all(decision.labels != 0)


def test_decide_fdr_I_directions_follow_dominant_state():
    probs = make_probs([0.01, 0.02], [0.9, 0.08], [0.09, 0.9])
    decision = decide_fdr_I(probs, alpha=0.5)
    np.testing.assert_array_equal(decision.labels, [1, 2])


def test_decide_fdr_I_III_hand_example():
    probs = make_probs([0.02, 0.05, 0.30], [0.95, 0.05, 0.60], [0.03, 0.90, 0.10])
    decision = decide_fdr_I_III(probs, alpha=0.1)
    np.testing.assert_array_equal(decision.labels, [1, 2, 0])


def test_decide_fdr_I_III_flat_scores_no_rejections():
    probs = make_probs([0.4] * 5, [0.5] * 5, [0.1] * 5)
    decision = decide_fdr_I_III(probs, alpha=0.1)
    assert np.all(decision.labels == 0)


def test_decide_fdr_I_III_alpha_one_rejects_all():
    rng = np.random.default_rng(4)
    probs = random_probs(rng, 9)
    assert np.all(decide_fdr_I_III(probs, alpha=1.0).labels != 0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 40))
def test_prefix_means_nondecreasing_and_estimate_bounded(seed, n):
    rng = np.random.default_rng(seed)
    probs = random_probs(rng, n)
    sorted_s0 = np.sort(probs.s0)
    prefix_means = np.cumsum(sorted_s0) / np.arange(1, n + 1)
    assert np.all(np.diff(prefix_means) >= -1e-15)
    alpha = float(rng.uniform(0.01, 0.99))
    decision = decide_fdr_I(probs, alpha)
    if np.any(decision.labels != 0):
        assert decision.estimates.mfdr_i <= alpha + 1e-12
    decision13 = decide_fdr_I_III(probs, alpha)
    if np.any(decision13.labels != 0):
        assert decision13.estimates.mfdr_i_iii <= alpha + 1e-12


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_threshold_and_rank_formulations_agree(seed):
    """Cutting s0 at 1/(1+lambda*) reproduces the prefix-search rejections."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 50))
    probs = random_probs(rng, n)
    if np.unique(probs.s0).size < n:
        return  # ties: sets agree only up to tie-group membership
    alpha = float(rng.uniform(0.05, 0.5))
    decision = decide_fdr_I(probs, alpha)
    rank_set = set(np.nonzero(decision.labels)[0])
    if decision.lambda_star is None:
        return
    lo, hi = 0.0, 1e12
    for _ in range(200):  # bisect lambda to the boundary of the same set
        mid = 0.5 * (lo + hi)
        rejected = probs.s0 <= 1.0 / (1.0 + mid)
        r = int(np.count_nonzero(rejected))
        mfdr = probs.s0[rejected].sum() / r if r else 0.0
        if mfdr <= alpha:
            hi = mid
        else:
            lo = mid
    threshold_set = set(np.nonzero(probs.s0 <= 1.0 / (1.0 + hi))[0])
    assert threshold_set == rank_set


def test_lambda_star_threshold_reproduces_rejections_directly():
    rng = np.random.default_rng(11)
    probs = random_probs(rng, 30)
    decision = decide_fdr_I(probs, 0.2)
    if decision.lambda_star is not None:
        cut = 1.0 / (1.0 + decision.lambda_star)
        np.testing.assert_array_equal(decision.labels != 0, probs.s0 <= cut + 1e-15)


# ---------------------------------------------------------------- estimates


def test_estimate_error_rates_hand_example():
    probs = make_probs([0.02, 0.05, 0.30], [0.95, 0.05, 0.60], [0.03, 0.90, 0.10])
    labels = np.array([1, 2, 0])
    est = estimate_error_rates(probs, labels)
    assert est.mfdr_i == pytest.approx(0.035)
    assert est.mfdr_iii == pytest.approx(0.04)
    assert est.mfdr_i_iii == pytest.approx(0.075)
    assert est.mfndr == pytest.approx(0.70)


def test_estimate_error_rates_empty_rejection_convention():
    probs = make_probs([0.7, 0.8], [0.2, 0.1], [0.1, 0.1])
    est = estimate_error_rates(probs, np.zeros(2, dtype=int))
    assert est.mfdr_i == 0.0 and est.mfdr_iii == 0.0
    assert est.mfndr == pytest.approx(np.mean([0.3, 0.2]))


def test_estimate_error_rates_zero_null_mass():
    probs = make_probs([0.0, 0.0], [1.0, 0.2], [0.0, 0.8])
    est = estimate_error_rates(probs, np.array([1, 2]))
    assert est.mfdr_i == 0.0


# ---------------------------------------------------------------- equivalence


def test_decide_equivalence_hand_example():
    probs = make_probs([0.99, 0.95, 0.50], [0.005, 0.04, 0.45], [0.005, 0.01, 0.05])
    decision = decide_equivalence(probs, alpha=0.1)
    np.testing.assert_array_equal(decision.labels == 3, [True, True, False])
    assert decision.labels[2] == 1  # s1 > s2 at the non-declared point
    assert decision.estimates.mfdr_e == pytest.approx(0.03)


def test_decide_equivalence_everything_equivalent_under_huge_margin():
    # a huge margin drives s0 to one everywhere
    probs = make_probs([1.0] * 4, [0.0] * 4, [0.0] * 4, delta=100.0)
    decision = decide_equivalence(probs, alpha=0.1)
    assert np.all(decision.labels == 3)
    assert decision.estimates.mfndr_e_ii == 0.0


def test_decide_equivalence_binding_at_level_reports_alpha():
    probs = make_probs([0.9] * 10, [0.05] * 10, [0.05] * 10)
    decision = decide_equivalence(probs, alpha=0.1)
    assert np.all(decision.labels == 3)
    assert decision.estimates.mfdr_e == pytest.approx(0.1)


def test_equivalence_duality_shares_state_probs():
    rng = np.random.default_rng(8)
    probs = random_probs(rng, 12)
    stat = 1.0 - probs.s0
    decision = decide_equivalence(probs, 0.3)
    declared = decision.labels == 3
    if np.any(declared):
        assert stat[declared].mean() <= 0.3 + 1e-12


# ---------------------------------------------------------------- baselines


def test_interval_null_pvalue_at_zero_difference():
    p, signs = interval_null_pvalues([0.0], se=1.0, delta=0.5)
    assert p[0] == pytest.approx(1.0)
    assert signs[0] == 0


def test_interval_null_pvalue_two_se_above_margin():
    from scipy.special import ndtr

    p, signs = interval_null_pvalues([0.5 + 2.0], se=1.0, delta=0.5)
    assert p[0] == pytest.approx(2.0 * (1.0 - ndtr(2.0)), rel=1e-10)
    assert p[0] == pytest.approx(0.0455, abs=1e-4)
    assert signs[0] == 1


def test_interval_null_reduces_to_z_test_at_zero_margin():
    from scipy.special import ndtr

    d = np.array([-1.7, 0.3, 2.2])
    p, _ = interval_null_pvalues(d, se=1.0, delta=0.0)
    expected = np.minimum(1.0, 2.0 * ndtr(-np.abs(d)))
    np.testing.assert_allclose(p, expected, rtol=1e-12)


def test_directional_bh_textbook_example():
    p = np.array([0.001, 0.02, 0.04, 0.5])
    signs = np.array([1.0, -1.0, 1.0, 1.0])
    labels = directional_bh(p, signs, alpha=0.1, variant="bh")
    np.testing.assert_array_equal(labels, [2, 1, 2, 0])


def test_directional_by_same_pvalues():
    # BY thresholds are k*alpha/(m*H_m) = k*0.012; p_(2)=0.02 <= 0.024 so the
    # step-up keeps two rejections
    p = np.array([0.001, 0.02, 0.04, 0.5])
    signs = np.ones(4)
    labels = directional_bh(p, signs, alpha=0.1, variant="by")
    assert np.count_nonzero(labels) == 2
    np.testing.assert_array_equal(np.nonzero(labels)[0], [0, 1])


def test_directional_bh_all_ones_no_rejections():
    labels = directional_bh(np.ones(5), np.ones(5), alpha=0.1, variant="bh")
    assert np.all(labels == 0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_by_rejections_subset_of_bh(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 60))
    p = rng.uniform(0, 1, m) ** rng.uniform(0.5, 3.0)
    signs = rng.choice([-1.0, 1.0], m)
    bh = directional_bh(p, signs, 0.1, "bh")
    by = directional_bh(p, signs, 0.1, "by")
    assert set(np.nonzero(by)[0]) <= set(np.nonzero(bh)[0])


# ---------------------------------------------------------------- areas


def test_extract_areas_empty():
    grid = PredictionGrid.regular(0.0, 1.0, 3)
    assert extract_areas(np.zeros(3, dtype=int), grid) == ()


def test_extract_areas_run_length_example():
    grid = PredictionGrid.regular(0.0, 1.0, 4)
    areas = extract_areas(np.array([2, 2, 0, 1]), grid)
    assert len(areas) == 2
    assert (areas[0].lo, areas[0].hi, areas[0].label) == (0.0, 0.5, 2)
    assert (areas[1].lo, areas[1].hi, areas[1].label) == (0.75, 1.0, 1)


def test_extract_areas_whole_domain():
    grid = PredictionGrid.regular(2.0, 6.0, 5)
    areas = extract_areas(np.full(5, 2, dtype=int), grid)
    assert len(areas) == 1
    assert (areas[0].lo, areas[0].hi) == (2.0, 6.0)


def test_extract_areas_measure_matches_run_length():
    grid = PredictionGrid.regular(0.0, 10.0, 20)
    labels = np.zeros(20, dtype=int)
    labels[4:9] = 1
    (area,) = extract_areas(labels, grid)
    assert area.hi - area.lo == pytest.approx(5 * 10.0 / 20)


def test_extract_areas_keeps_all_labels_for_equivalence():
    grid = PredictionGrid.regular(0.0, 1.0, 4)
    areas = extract_areas(np.array([1, 3, 3, 2]), grid, null_label=None)
    assert [a.label for a in areas] == [1, 3, 2]
    assert areas[0].hi == pytest.approx(0.25)
    assert areas[-1].lo == pytest.approx(0.75)
