import numpy as np
import pytest

from sigareas.gpr import FitConfig
from sigareas.posterior import PredictionGrid
from sigareas.simulation import (
    MetricsRecord,
    Scenario,
    StudyError,
    decision_grid,
    evaluate_decisions,
    example1_scenario,
    example2_scenario,
    run_study,
    simulate_dataset,
    write_study_csv,
)
from sigareas.kernels import KernelSpec


# ---------------------------------------------------------------- scenarios


def test_example1_scenario_matches_design_parameters():
    sc = example1_scenario(omega=80.0)
    assert sc.kappa_spec == KernelSpec(3.0, 2.0, 0.0)
    assert sc.gamma_spec == KernelSpec(10.0, 80.0, 0.0)
    assert sc.sigma2_true == 1.0 and sc.delta == 0.80
    assert sc.n1 == sc.n2 == sc.n_grid == 500
    assert sc.domain == (6.0, 13.0)


def test_example2_scenario_has_nonstationary_shared_kernel():
    sc = example2_scenario(omega=20.0)
    assert sc.kappa_spec.zeta == 3.0
    assert sc.n1 == sc.n2 == 200 and sc.n_grid == 500
    assert sc.n_overlap == 40


def test_example1_requires_grid_equal_to_sample_size():
    with pytest.raises(ValueError):
        Scenario(
            design="example1",
            n1=100,
            n2=100,
            n_grid=50,
            domain=(0.0, 1.0),
            kappa_spec=KernelSpec(1.0, 1.0),
            gamma_spec=KernelSpec(1.0, 1.0),
            sigma2_true=1.0,
            delta=0.5,
        )


# ---------------------------------------------------------------- generator


def test_simulate_dataset_deterministic_given_seed():
    sc = example1_scenario(omega=20.0, n=50)
    a1, a2, ta = simulate_dataset(sc, seed=5)
    b1, b2, tb = simulate_dataset(sc, seed=5)
    np.testing.assert_array_equal(a1.t, b1.t)
    np.testing.assert_array_equal(a1.y, b1.y)
    np.testing.assert_array_equal(a2.y, b2.y)
    np.testing.assert_array_equal(ta.mu_d_true, tb.mu_d_true)
    np.testing.assert_array_equal(ta.z_true, tb.z_true)


def test_example1_groups_share_times_and_truth_sits_on_them():
    sc = example1_scenario(omega=20.0, n=40)
    s1, s2, truth = simulate_dataset(sc, seed=1)
    np.testing.assert_array_equal(s1.t, s2.t)
    np.testing.assert_array_equal(truth.points, s1.t)
    assert np.all(np.diff(s1.t) > 0)


def test_example2_overlap_fraction_and_fresh_grid():
    sc = example2_scenario(omega=20.0, n1=50, n2=50, n_grid=80, overlap_frac=0.2)
    s1, s2, truth = simulate_dataset(sc, seed=2)
    shared = np.intersect1d(s1.t, s2.t)
    assert shared.size == 10  # round(0.2 * 50)
    expected_grid = PredictionGrid.regular(6.0, 13.0, 80).points
    np.testing.assert_allclose(truth.points, expected_grid)


def test_truth_states_follow_margin_thresholds():
    sc = example1_scenario(omega=20.0, n=60)
    _, _, truth = simulate_dataset(sc, seed=3)
    np.testing.assert_array_equal(truth.z_true == 0, np.abs(truth.mu_d_true) <= sc.delta)
    np.testing.assert_array_equal(truth.z_true == 1, truth.mu_d_true < -sc.delta)
    np.testing.assert_array_equal(truth.z_true == 2, truth.mu_d_true > sc.delta)


def test_degenerate_difference_prior_gives_all_null_truth():
    sc = Scenario(
        design="example1",
        n1=30,
        n2=30,
        n_grid=30,
        domain=(0.0, 1.0),
        kappa_spec=KernelSpec(1.0, 1.0),
        gamma_spec=KernelSpec(0.0, 1.0),
        sigma2_true=1.0,
        delta=0.5,
        overlap_frac=1.0,
    )
    s1, s2, truth = simulate_dataset(sc, seed=4)
    np.testing.assert_array_equal(truth.mu_d_true, 0.0)
    assert np.all(truth.z_true == 0)


def test_null_fraction_calibration():
    """With difference-prior variance 10 and margin 0.80, about 20% of test
    points are true nulls: 2*Phi(0.8/sqrt(10)) - 1 = 0.201."""
    sc = example1_scenario(omega=20.0, n=200)
    fractions = [
        np.mean(simulate_dataset(sc, seed=seed)[2].z_true == 0) for seed in range(200)
    ]
    assert abs(float(np.mean(fractions)) - 0.20) <= 0.02


# ---------------------------------------------------------------- metrics


def grid_for(n, lo=0.0, hi=1.0):
    return PredictionGrid.regular(lo, hi, n)


def make_truth(z):
    z = np.asarray(z, dtype=int)
    mu = np.where(z == 0, 0.0, np.where(z == 1, -1.0, 1.0))
    from sigareas.simulation import TruthAssignment

    return TruthAssignment(points=np.linspace(0, 1, z.size), mu_d_true=mu, z_true=z)


def test_evaluate_decisions_perfect_recovery():
    truth = make_truth([0, 1, 2, 2, 0])
    rec = evaluate_decisions(truth, truth.z_true, grid_for(5))
    assert rec.fdp_i == 0.0 and rec.fdp_i_iii == 0.0 and rec.fndp == 0.0
    assert rec.mp_miss_mass == 0.0


def test_evaluate_decisions_all_null_truth_any_rejection_is_false():
    truth = make_truth([0, 0, 0])
    rec = evaluate_decisions(truth, np.array([2, 0, 1]), grid_for(3))
    assert rec.fdp_i == 1.0


def test_evaluate_decisions_hand_count():
    truth = make_truth([0, 1, 2, 2])
    rec = evaluate_decisions(truth, np.array([0, 2, 2, 0]), grid_for(4))
    assert rec.v_counts[1, 2] == 1 and rec.v_counts[2, 2] == 1
    assert rec.v_counts[2, 0] == 1 and rec.v_counts[0, 0] == 1
    assert rec.fdp_i == 0.0
    assert rec.fdp_i_iii == pytest.approx(0.5)
    assert rec.fndp == pytest.approx(0.5)


def test_counts_always_partition_the_grid():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        truth = make_truth(rng.integers(0, 3, n))
        rec = evaluate_decisions(truth, rng.integers(0, 3, n), grid_for(n))
        assert rec.v_counts.sum() == n
        assert 0.0 <= rec.fdp_i <= 1.0 and 0.0 <= rec.fndp <= 1.0


def test_evaluate_decisions_length_mismatch_raises():
    truth = make_truth([0, 1])
    with pytest.raises(ValueError):
        evaluate_decisions(truth, np.array([0, 1, 2]), grid_for(3))


# ---------------------------------------------------------------- studies


@pytest.fixture(scope="module")
def tiny_study():
    sc = example1_scenario(omega=20.0, n=120)
    return run_study(
        sc,
        reps=4,
        alpha=0.10,
        procedures=("fdr1", "fdr13", "bh", "by"),
        seed=7,
        use_true_theta=True,
    )


def test_single_rep_study_reproduces_evaluate_decisions(tiny_study):
    sc = tiny_study.scenario
    single = run_study(sc, reps=1, alpha=0.10, procedures=("fdr1",), seed=7, use_true_theta=True)
    outcome = single.replicates[0]
    sample1, _, truth = simulate_dataset(sc, outcome.seed)
    grid = decision_grid(sc, sample1)
    rec = evaluate_decisions(truth, outcome.labels["fdr1"], grid)
    assert rec.fdp_i == outcome.metrics["fdr1"].fdp_i
    assert rec.v_counts.tolist() == outcome.metrics["fdr1"].v_counts.tolist()


def test_matched_seed_baselines_nested_rejections(tiny_study):
    for outcome in tiny_study.replicates:
        by_set = set(np.nonzero(outcome.labels["by"])[0])
        bh_set = set(np.nonzero(outcome.labels["bh"])[0])
        assert by_set <= bh_set


def test_study_summary_fields(tiny_study):
    s = tiny_study.summaries["fdr1"]
    assert s.reps_used == 4 and s.failures == 0
    assert 0.0 <= s.fdp_i_mean <= 1.0
    assert np.isfinite(s.est_mfdr_i_mean)
    b = tiny_study.summaries["bh"]
    assert np.isnan(b.est_mfdr_i_mean)


def test_study_mp_is_one_under_perfect_recovery():
    recs = [
        MetricsRecord(
            v_counts=np.diag([2, 3, 3]),
            cell_measure=0.1,
            fdp_i=0.0,
            fdp_i_iii=0.0,
            fndp=0.0,
            mp_miss_mass=0.0,
            mp_alt_mass=0.6,
        )
        for _ in range(3)
    ]
    miss = sum(r.mp_miss_mass for r in recs)
    alt = sum(r.mp_alt_mass for r in recs)
    assert 1.0 - miss / alt == 1.0


def test_study_parallel_matches_serial():
    sc = example1_scenario(omega=20.0, n=80)
    kwargs = dict(reps=3, alpha=0.10, procedures=("fdr1",), seed=11, use_true_theta=True)
    serial = run_study(sc, n_jobs=1, **kwargs)
    parallel = run_study(sc, n_jobs=2, **kwargs)
    for a, b in zip(serial.replicates, parallel.replicates):
        np.testing.assert_array_equal(a.labels["fdr1"], b.labels["fdr1"])
    assert serial.summaries["fdr1"] == parallel.summaries["fdr1"]


def test_baselines_rejected_on_example2_design():
    sc = example2_scenario(omega=20.0, n1=40, n2=40, n_grid=50)
    with pytest.raises(StudyError):
        run_study(sc, reps=2, alpha=0.1, procedures=("bh",), seed=0, use_true_theta=True)


def test_study_csv_round_trip(tmp_path, tiny_study):
    import csv

    path = tmp_path / "study.csv"
    write_study_csv(tiny_study, path)
    with open(path) as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 4
    by_proc = {row["procedure"]: row for row in rows}
    assert float(by_proc["fdr1"]["fdp_i_mean"]) == pytest.approx(
        tiny_study.summaries["fdr1"].fdp_i_mean, rel=1e-9
    )
    assert by_proc["fdr1"]["design"] == "example1"
    assert float(by_proc["fdr1"]["omega"]) == 20.0


def test_fitted_small_study_controls_fdr():
    """End-to-end with estimated hyperparameters at a reduced scale."""
    sc = example1_scenario(omega=20.0, n=150)
    result = run_study(
        sc,
        reps=3,
        alpha=0.10,
        procedures=("fdr1",),
        seed=21,
        fit_config=FitConfig(restarts=2, max_iters=100, seed=1),
        n_jobs=2,
    )
    s = result.summaries["fdr1"]
    assert s.failures == 0
    assert s.fdp_i_mean <= 0.25  # loose sanity bound at tiny scale
    assert s.est_mfdr_i_mean <= 0.10 + 1e-9
