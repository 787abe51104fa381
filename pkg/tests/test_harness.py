"""Monte Carlo harness: generators, moments, CLT, reduction reports."""

from __future__ import annotations

import numpy as np
import pytest

from gramgate.calibrators import WeightLaw
from gramgate.errors import ConstantLosses, InvalidSpec
from gramgate.harness import (
    CalibratorConfig,
    ScoreLaw,
    SeverityModel,
    SyntheticSpec,
    anti_concentration_check,
    benchmark_calibrators,
    clt_check,
    fs_reduction_report,
    generate_trial,
    rbwa_moment_check,
    run_risk_experiment,
)
from gramgate.policy import CalibrationItem, Threshold, items_to_arrays


def spec_with(**kwargs) -> SyntheticSpec:
    base = dict(n=40, trials=5, fresh_eval_size=200, seed=0)
    base.update(kwargs)
    return SyntheticSpec(**base)


# --- generators ---------------------------------------------------------------


def test_zero_cutoff_gives_zero_severities():
    spec = spec_with(severity_model=SeverityModel("deterministic", tau=0.0))
    cal, fresh = generate_trial(spec, 0)
    assert all(it.severity == 0.0 for it in cal + fresh)


def test_steep_logistic_approximates_indicator():
    spec = spec_with(n=2000, severity_model=SeverityModel("logistic", k=1e6, q0=0.5))
    cal, _ = generate_trial(spec, 0)
    q, m = items_to_arrays(cal)
    np.testing.assert_array_equal(m, (q < 0.5).astype(float))


def test_uniform_scores_law_of_large_numbers():
    spec = spec_with(n=100_000, fresh_eval_size=100)
    cal, _ = generate_trial(spec, 0)
    q, _ = items_to_arrays(cal)
    assert abs(q.mean() - 0.5) <= 0.005


def test_generate_trial_deterministic_and_distinct_across_trials():
    spec = spec_with()
    a1, f1 = generate_trial(spec, 3)
    a2, f2 = generate_trial(spec, 3)
    assert [it.q_score for it in a1] == [it.q_score for it in a2]
    assert [it.q_score for it in f1] == [it.q_score for it in f2]
    b1, _ = generate_trial(spec, 4)
    assert [it.q_score for it in a1] != [it.q_score for it in b1]


def test_spec_invariants():
    with pytest.raises(InvalidSpec):
        spec_with(n=3)
    with pytest.raises(InvalidSpec):
        spec_with(fresh_eval_size=50)
    with pytest.raises(InvalidSpec):
        ScoreLaw("triangular")


# --- risk experiment -----------------------------------------------------------


def test_zero_severity_spec_gives_zero_risk_rows():
    spec = spec_with(severity_model=SeverityModel("deterministic", tau=0.0), trials=4)
    result = run_risk_experiment(spec, benchmark_calibrators(batch_count=4, replicates=5),
                                 [0.1, 0.2])
    for row in result.rows:
        assert row.mean_empirical_risk == 0.0


def test_correction_dominated_crc_rejects_every_trial():
    spec = spec_with(n=4, trials=6)
    # CRC with n=4: 1/(n+1) = 0.2 exactly meets alpha=0.2, so use 0.15
    result = run_risk_experiment(spec, [CalibratorConfig(name="crc")], [0.15])
    row = result.rows[0]
    assert row.reject_rate == 1.0
    assert row.mean_empirical_risk == 0.0
    assert row.lambda_se == 0.0 and row.mean_lambda == 0.0


def test_risk_experiment_deterministic_and_worker_independent():
    spec = spec_with(n=24, trials=6, fresh_eval_size=120, seed=9)
    configs = benchmark_calibrators(batch_count=4, replicates=10)
    first = run_risk_experiment(spec, configs, [0.1, 0.2])
    second = run_risk_experiment(spec, configs, [0.1, 0.2])
    parallel = run_risk_experiment(spec, configs, [0.1, 0.2], workers=2)
    assert [r.as_dict() for r in first.rows] == [r.as_dict() for r in second.rows]
    assert [r.as_dict() for r in first.rows] == [r.as_dict() for r in parallel.rows]


def test_risk_bound_holds_on_small_benchmark():
    spec = spec_with(n=60, trials=60, fresh_eval_size=400,
                     severity_model=SeverityModel("logistic", k=10.0, q0=0.5), seed=5)
    result = run_risk_experiment(spec, benchmark_calibrators(batch_count=6, replicates=20),
                                 [0.2])
    for row in result.rows:
        assert row.mean_empirical_risk <= row.alpha + 2 * row.risk_se


# --- moment identities ------------------------------------------------------------


def test_constant_losses_have_zero_variance():
    report = rbwa_moment_check([0.4, 0.4, 0.4], eta=1.0, num_samples=5000, rng=0)
    assert report.var_closed == 0.0
    assert report.var_empirical == pytest.approx(0.0, abs=1e-12)


def test_moment_check_matches_closed_form_fixture():
    report = rbwa_moment_check([0.0, 0.2, 0.5, 1.0], eta=2.0, num_samples=100_000, rng=11)
    assert report.mu_closed == pytest.approx(0.425)
    assert report.var_closed == pytest.approx(0.141875 / 9.0)
    # oracle arithmetic: population variance of the losses over kappa + 1
    ell = np.array([0.0, 0.2, 0.5, 1.0])
    assert report.var_closed == pytest.approx(float(ell.var()) / (4 * 2.0 + 1))
    assert report.var_rel_err <= 0.02
    assert report.mu_rel_err <= 0.01
    assert report.cantelli_pass


def test_moment_check_two_point_fixture():
    report = rbwa_moment_check([0.0, 1.0], eta=1.0, num_samples=100_000, rng=12)
    assert report.var_closed == pytest.approx(0.25 / 3.0)
    assert report.var_rel_err <= 0.05


def test_anti_concentration_pass_and_errors():
    ok, info = anti_concentration_check([0.0, 1.0], eta=1.0, num_samples=10_000, rng=3)
    assert ok and info["ties"] == 0
    ok, _ = anti_concentration_check([0.1, 0.2, 0.3], eta=1.0, num_samples=10_000, rng=4)
    assert ok
    with pytest.raises(ConstantLosses):
        anti_concentration_check([0.3, 0.3], eta=1.0, num_samples=100, rng=5)


# --- CLT ---------------------------------------------------------------------------


def test_clt_zero_variance_flagged():
    spec = spec_with(n=4, severity_model=SeverityModel("deterministic", tau=0.0))
    rows = clt_check(spec, 0.5, [10], WeightLaw.dirichlet(1.0), replications=50,
                     rng=np.random.default_rng(0), plugin_pool=500)
    assert rows[0].zero_variance
    assert np.isnan(rows[0].ks_distance)


def test_clt_distance_shrinks_with_batch_count():
    spec = spec_with(n=4, severity_model=SeverityModel("deterministic", tau=0.51))
    rows = clt_check(spec, 0.5, [5, 200], WeightLaw.dirichlet(0.5), replications=600,
                     rng=np.random.default_rng(1), plugin_pool=100_000)
    assert rows[0].ks_distance > rows[1].ks_distance


def test_clt_uniform_law_reduces_to_between_batch_variance():
    spec = spec_with(n=4, severity_model=SeverityModel("deterministic", tau=0.6))
    uniform = clt_check(spec, 0.5, [100], WeightLaw.uniform(), replications=500,
                        rng=np.random.default_rng(2), plugin_pool=100_000)
    assert uniform[0].ks_distance < 0.08
    # plug-in variance equals Var(mu_g) alone under uniform weights
    spec_pool = clt_check(spec, 0.5, [100], WeightLaw.dirichlet(1e9), replications=500,
                          rng=np.random.default_rng(2), plugin_pool=100_000)
    assert uniform[0].var_plugin == pytest.approx(spec_pool[0].var_plugin, rel=1e-6)


# --- reduction report ----------------------------------------------------------------


def test_reject_all_reduction_is_nan_with_zero_acceptance():
    items = [CalibrationItem(0.5, 0.5), CalibrationItem(0.9, 0.1)]
    report = fs_reduction_report(items, Threshold.reject_all(0.1))
    assert np.isnan(report.fs_shipped)
    assert np.isnan(report.reduction_pct)
    assert report.acceptance_rate == 0.0


def test_all_shipped_reduction_is_nan():
    items = [CalibrationItem(0.5, 0.5), CalibrationItem(0.9, 0.1)]
    report = fs_reduction_report(items, Threshold(value=0.0, alpha=0.1))
    assert np.isnan(report.fs_unshipped)
    assert report.acceptance_rate == 1.0


def test_reduction_formula_matches_fixture_means():
    # shipped/unshipped severity means pinned to 0.019 / 0.892
    items = (
        [CalibrationItem(0.9, 0.019)] * 10 + [CalibrationItem(0.1, 0.892)] * 10
    )
    report = fs_reduction_report(items, Threshold(value=0.5, alpha=0.01))
    assert report.fs_shipped == pytest.approx(0.019)
    assert report.fs_unshipped == pytest.approx(0.892)
    assert report.reduction_pct == pytest.approx(97.9, abs=0.05)
    assert report.acceptance_rate == pytest.approx(0.5)
