"""Synthetic worlds, the retraining loop, misspecification, sweeps, the
signal scenario, and transparency bounds."""

from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import norm

import stablerules as sr
from stablerules.errors import InvalidInputError

from conftest import two_feature_world, zero_gaming_costs


def test_generate_population_is_seed_deterministic():
    cfg = two_feature_world(seed=1, n=500)
    a = sr.generate_population(cfg)
    b = sr.generate_population(cfg)
    assert (a.bliss == b.bliss).all()
    assert (a.outcomes == b.outcomes).all()
    assert (a.gaming == b.gaming).all()


def test_generate_population_noiseless_fits_exactly():
    cfg = replace(two_feature_world(seed=2, n=300), noise_sigma=0.0)
    pop, costs = sr.generate_world(cfg)
    assert sr.counterfactual_loss(cfg.true_rule, pop, costs, False) == pytest.approx(0.0, abs=1e-20)


def test_generate_population_matches_covariance():
    cfg = replace(sr.BENCHMARK_DGP, seed=3)
    pop = sr.generate_population(cfg)
    sample_cov = np.cov(pop.bliss.T)
    np.testing.assert_allclose(sample_cov, np.array(cfg.bliss_cov), atol=0.05)


def test_threshold_gamma_fraction_matches_normal_tail():
    cfg = replace(sr.BENCHMARK_DGP, seed=4)
    pop = sr.generate_population(cfg)
    frac_high = float(np.mean(pop.gaming == 10.0))
    sd1 = np.sqrt(cfg.bliss_cov[0][0])
    expected = 1.0 - norm.cdf(0.2 / sd1)
    assert frac_high == pytest.approx(expected, abs=0.02)


def test_generate_population_rejects_bad_covariance():
    cfg = two_feature_world(seed=5, n=10)
    bad = replace(cfg, bliss_cov=((1.0, 2.0), (2.0, 1.0)))  # not PSD
    with pytest.raises(InvalidInputError):
        sr.generate_population(bad)


def test_signal_gamma_floor():
    rows = sr.manipulation_signal_scenario(seed=6, n_agents=2000)
    pop = sr.generate_population(replace(sr.SIGNAL_DGP, seed=6, n_agents=2000))
    assert float(np.min(pop.gaming)) >= 0.1
    assert {r.label for r in rows} == {"dgp", "ols", "stable"}


# --------------------------------------------------------------- industry loop

def test_industry_loop_fixed_point_without_gaming():
    cfg = two_feature_world(seed=7, n=400)
    pop = sr.generate_population(cfg)
    pop = pop.with_gaming(np.zeros(pop.n_agents))
    costs = zero_gaming_costs(2)
    report = sr.run_industry_loop(pop, costs, rounds=6)
    base = report.rules[0].as_vector()
    for rule in report.rules[1:]:
        np.testing.assert_allclose(rule.as_vector(), base, atol=1e-8)


def test_industry_loop_bookkeeping():
    cfg = two_feature_world(seed=8, n=250)
    pop, costs = sr.generate_world(cfg)
    report = sr.run_industry_loop(pop, costs, rounds=5, mode="cumulative")
    n = pop.n_agents
    assert report.training_rows == tuple((r + 1) * n for r in range(6))
    warm = sr.run_industry_loop(pop, costs, rounds=3, mode="cumulative",
                                initial_rule=report.rules[0])
    assert warm.training_rows == (0, n, 2 * n, 3 * n)
    last = sr.run_industry_loop(pop, costs, rounds=3, mode="last_period")
    assert last.training_rows == (n, n, n, n)


def test_industry_loop_records_both_loss_columns():
    cfg = two_feature_world(seed=9, n=250)
    pop, costs = sr.generate_world(cfg)
    report = sr.run_industry_loop(pop, costs, rounds=3)
    for r, rule in enumerate(report.rules):
        assert report.losses_no_manip[r] == pytest.approx(
            sr.counterfactual_loss(rule, pop, costs, False), rel=1e-12)
        assert report.losses_manip[r] == pytest.approx(
            sr.counterfactual_loss(rule, pop, costs, True), rel=1e-12)


def test_industry_loop_singular_refit_falls_back_to_ridge():
    """All-identical bliss rows collapse variation once gaming is zero, so the
    refit Gram matrix is singular and the flagged ridge fallback kicks in."""
    n = 50
    bliss = np.tile([1.0, 2.0], (n, 1))
    rng = np.random.default_rng(10)
    pop = sr.Population(bliss, rng.normal(0, 1, n), np.zeros(n))
    costs = zero_gaming_costs(2)
    report = sr.run_industry_loop(pop, costs, rounds=2,
                                  initial_rule=sr.DecisionRule(0.0, np.zeros(2)))
    assert report.fallback_rounds
    assert all(np.isfinite(r.as_vector()).all() for r in report.rules)


# ------------------------------------------------------------ misspecification

def test_misspecify_costs_identity_on_diagonal():
    costs = sr.CostModel(np.diag([0.5, 0.25]), omega=[1.0], gaming_shocks=[0.0])
    same = sr.misspecify_costs(costs, scale=1.0)
    np.testing.assert_allclose(same.inv_cost, costs.inv_cost, atol=1e-14)


def test_misspecify_costs_doubles_cost_diagonal():
    costs = sr.cost_model_for(sr.BENCHMARK_DGP)
    misspec = sr.misspecify_costs(costs, scale=2.0)
    np.testing.assert_allclose(
        misspec.cost_view, np.diag([2.0, 4.0, 8.0]), atol=1e-12)
    np.testing.assert_allclose(
        np.diag(misspec.inv_cost), [0.5, 0.25, 0.125], atol=1e-12)


def test_misspecify_costs_scale_only():
    costs = sr.cost_model_for(sr.BENCHMARK_DGP)
    scaled = sr.misspecify_costs(costs, scale=3.0, diagonal_only=False)
    np.testing.assert_allclose(scaled.inv_cost, costs.inv_cost / 3.0, atol=1e-12)


# ----------------------------------------------------------------- sweeps

def test_sweep_rows_schema_and_determinism():
    cfg = two_feature_world(seed=11, n=600)
    rows = sr.comparative_statics_sweep(cfg, "global_inverse_gaming",
                                        [10.0, 1.0], ["ols", "stable"])
    assert len(rows) == 2 * 2 * 3  # grid x estimators x (intercept + 2 slopes)
    again = sr.comparative_statics_sweep(cfg, "global_inverse_gaming",
                                         [10.0, 1.0], ["ols", "stable"])
    assert [(r.value, r.estimator, r.coef) for r in rows] == [
        (r.value, r.estimator, r.coef) for r in again]
    for r in rows:
        assert r.axis == "global_inverse_gaming"
        assert r.loss_oos >= 0.0


def test_sweep_empty_grid_rejected():
    cfg = two_feature_world(seed=12, n=100)
    with pytest.raises(InvalidInputError):
        sr.comparative_statics_sweep(cfg, "alpha_22", [], ["ols"])


def test_sweep_lambda_axis_drives_lasso():
    cfg = two_feature_world(seed=13, n=800)
    pop = sr.generate_population(cfg)
    from stablerules.estimators import lasso_null_lambda

    lam_max = lasso_null_lambda(pop)
    rows = sr.comparative_statics_sweep(cfg, "lambda", [lam_max * 1.1, lam_max * 1e-4],
                                        ["lasso"])
    big = [r for r in rows if r.value == pytest.approx(lam_max * 1.1) and r.coef_index > 0]
    assert all(r.coef == 0.0 for r in big)


# ------------------------------------------------------------- transparency

def test_transparency_bound_zero_without_gaming():
    cfg = two_feature_world(seed=14, n=300)
    pop = sr.generate_population(cfg).with_gaming(np.zeros(300))
    costs = zero_gaming_costs(2)
    rule = sr.fit_ols(pop).rule
    predicted, equilibrium = sr.transparency_cost(pop, costs, rule, rule)
    assert predicted == 0.0
    assert equilibrium == 0.0


def test_transparency_bound_with_realized_population():
    cfg = two_feature_world(seed=15, n=500)
    pop, costs = sr.generate_world(cfg)
    naive = sr.fit_ols(pop).rule
    robust = sr.fit_strategy_robust(pop, costs).rule
    predicted, eq_model = sr.transparency_cost(pop, costs, naive, robust)
    realized = sr.Population(
        sr.best_response_matrix(pop, robust, costs), pop.outcomes,
        pop.gaming, pop.observables, pop.feature_names,
    )
    predicted2, eq_realized = sr.transparency_cost(pop, costs, naive, robust,
                                                   realized=realized)
    assert predicted2 == pytest.approx(predicted, rel=1e-12)
    assert eq_realized == pytest.approx(eq_model, rel=1e-12)


def test_derive_seed_stability():
    assert sr.derive_seed(0, 1, 2) == sr.derive_seed(0, 1, 2)
    assert sr.derive_seed(0, 1, 2) != sr.derive_seed(0, 1, 3)


# ------------------------------------------------------------- table reports

def test_benchmark_report_small_scale():
    cfg = replace(sr.BENCHMARK_DGP, n_agents=800)
    report = sr.benchmark_report(cfg, seeds=2, base_seed=0, rounds=12,
                                 checkpoints=(1, 12), warm_rounds=1)
    labels = [r.label for r in report.rows]
    assert labels == ["dgp", "ols", "ols_r1", "ols_r12", "stable",
                      "stable_misspecified", "warm_r1"]
    assert report.row("ols").loss_manip_mean > report.row("stable").loss_manip_mean
    from stablerules.simulation import table_to_markdown

    rendered = table_to_markdown(report)
    assert rendered.count("\n") == len(labels) + 4


def test_oscillation_report_small_scale():
    cfg = replace(sr.BENCHMARK_DGP, n_agents=800)
    report = sr.oscillation_report(cfg, seeds=2, base_seed=0, rounds=4)
    b1 = [report.row(f"ols_r{r}").coef_mean[1] for r in range(1, 5)]
    assert b1[0] < b1[1] and b1[2] < b1[1]


def test_signal_report_threads_match_serial():
    serial = sr.signal_report(seeds=3, base_seed=0, n_agents=400, threads=1)
    threaded = sr.signal_report(seeds=3, base_seed=0, n_agents=400, threads=4)
    for a, b in zip(serial.rows, threaded.rows):
        assert a == b
