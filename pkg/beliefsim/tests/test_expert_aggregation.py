"""
.. See the NOTICE file distributed with this work for additional information
   regarding copyright ownership.
   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at
       http://www.apache.org/licenses/LICENSE-2.0
   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
"""
import logging
import math

import numpy as np
import pytest

from common.exceptions import InvalidInputError, NumericalFailureError
from beliefsim.expert_aggregation import (
    PATH_COLUMNS,
    SOLUTION_COLUMNS,
    AggregationConfig,
    BudgetMode,
    ExpertFamily,
    FamilyKind,
    FilterModel,
    TiltSolution,
    aggregation_experiment,
    backout_alpha,
    calibrate_budget,
    calibrate_config,
    gibbs_weights,
    kalman_bucy,
    kl_at,
    log_partition,
    simulate_aggregation_triplet,
    solve_fixed_point,
    tilted_density,
    tilted_mean,
    tilted_variance,
)
from beliefsim.measures1d import DiscreteMeasure1D, kl_discrete
from beliefsim.sde_core import TimeGrid

UNIFORM = ExpertFamily.uniform(a_hat=0.0, c1=1.0)
BETA_2_3 = ExpertFamily.beta(a_hat=0.0, c1=1.0, a_pi=2.0, b_pi=3.0)
TWENTY_EXPERTS = ExpertFamily.discrete(np.linspace(0.0, 1.0, 20))


def test_uniform_reference_values():
    assert log_partition(1.0, UNIFORM) == pytest.approx(math.log(1 - math.exp(-1.0)), abs=1e-12)
    assert log_partition(1.0, UNIFORM) == pytest.approx(-0.458675, abs=1e-6)
    assert tilted_mean(1.0, UNIFORM) == pytest.approx(1 - 1 / (math.e - 1), abs=1e-12)
    assert tilted_mean(1.0, UNIFORM) == pytest.approx(0.418023, abs=1e-6)
    assert tilted_variance(0.0, UNIFORM) == pytest.approx(1 / 12, abs=1e-15)
    assert kl_at(1.0, UNIFORM) == pytest.approx(0.040652, abs=1e-6)


def test_untilted_quantities():
    for family in (UNIFORM, BETA_2_3, TWENTY_EXPERTS):
        assert log_partition(0.0, family) == pytest.approx(0.0, abs=1e-15)
        assert kl_at(0.0, family) == pytest.approx(0.0, abs=1e-15)
    assert tilted_mean(0.0, BETA_2_3) == pytest.approx(0.4, abs=1e-14)


def test_offset_shifts_the_mean_only():
    shifted = ExpertFamily.uniform(a_hat=0.3, c1=1.0)
    assert tilted_mean(2.0, shifted) == pytest.approx(0.3 + tilted_mean(2.0, UNIFORM), abs=1e-14)
    assert kl_at(2.0, shifted) == pytest.approx(kl_at(2.0, UNIFORM), abs=1e-14)
    assert tilted_variance(2.0, shifted) == pytest.approx(tilted_variance(2.0, UNIFORM), abs=1e-14)


@pytest.mark.parametrize("theta", [-40.0, -3.0, -0.5, 0.004, 0.5, 3.0, 40.0, 300.0])
def test_unit_beta_prior_is_uniform(theta):
    beta = ExpertFamily.beta(a_hat=0.0, c1=1.0, a_pi=1.0, b_pi=1.0)
    assert log_partition(theta, beta) == pytest.approx(log_partition(theta, UNIFORM), rel=1e-12, abs=1e-12)
    assert tilted_mean(theta, beta) == pytest.approx(tilted_mean(theta, UNIFORM), rel=1e-12, abs=1e-12)
    assert kl_at(theta, beta) == pytest.approx(kl_at(theta, UNIFORM), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("family", [UNIFORM, BETA_2_3, TWENTY_EXPERTS], ids=["uniform", "beta", "discrete"])
def test_derivative_identities(family):
    h = 1e-4
    for theta in np.linspace(-50.0, 50.0, 21):
        variance = tilted_variance(theta, family)
        d_psi = (tilted_mean(theta + h, family) - tilted_mean(theta - h, family)) / (2 * h)
        d_kl = (kl_at(theta + h, family) - kl_at(theta - h, family)) / (2 * h)
        d_log_z = (log_partition(theta + h, family) - log_partition(theta - h, family)) / (2 * h)
        assert d_psi == pytest.approx(-variance, rel=1e-6, abs=1e-10)
        assert d_kl == pytest.approx(theta * variance, rel=1e-6, abs=1e-10)
        assert d_log_z == pytest.approx(-tilted_mean(theta, family), rel=1e-6, abs=1e-10)


def test_large_tilts_stay_finite():
    for family in (UNIFORM, BETA_2_3, TWENTY_EXPERTS):
        for theta in (-600.0, 600.0):
            lo, hi = family.rho_range()
            assert lo <= tilted_mean(theta, family) <= hi
            assert kl_at(theta, family) >= 0
    assert tilted_mean(1.0e9, UNIFORM) == pytest.approx(1.0e-9, rel=1e-9)


def test_tilted_density_integrates_to_one():
    lam = (np.arange(20000) + 0.5) / 20000
    for family in (UNIFORM, BETA_2_3):
        density = tilted_density(lam, 3.0, family)
        assert density.mean() == pytest.approx(1.0, abs=1e-6)
        assert np.dot(density, lam) / lam.size == pytest.approx(tilted_mean(3.0, family), abs=1e-6)
    assert tilted_density(np.array([-0.1, 1.1]), 3.0, UNIFORM).tolist() == [0.0, 0.0]
    with pytest.raises(InvalidInputError):
        tilted_density(lam, 1.0, TWENTY_EXPERTS)


def test_gibbs_weights_two_experts():
    family = ExpertFamily.discrete([0.0, 1.0], prior=[0.5, 0.5])
    weights = gibbs_weights(math.log(3.0), family)
    np.testing.assert_allclose(weights.weights, [0.75, 0.25], atol=1e-15)
    assert tilted_mean(math.log(3.0), family) == pytest.approx(0.25)


def test_gibbs_weights_concentrate_on_the_smallest_drift():
    family = ExpertFamily.discrete([0.3, 0.1, 0.7], prior=[0.2, 0.5, 0.3])
    weights = gibbs_weights(1.0e3, family)
    assert weights.weights[1] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InvalidInputError):
        gibbs_weights(1.0, UNIFORM)


def test_kl_matches_discretized_relative_entropy():
    fine = UNIFORM.discretize(10_000)
    tilted = gibbs_weights(1.0, fine)
    prior = DiscreteMeasure1D(np.asarray(fine.atoms), fine.prior_weights)
    assert kl_discrete(tilted, prior) == pytest.approx(kl_at(1.0, UNIFORM), abs=1e-6)
    assert kl_at(1.0, fine) == pytest.approx(kl_at(1.0, UNIFORM), abs=1e-6)
    beta_fine = BETA_2_3.discretize(10_000)
    assert tilted_mean(2.0, beta_fine) == pytest.approx(tilted_mean(2.0, BETA_2_3), abs=1e-6)


def test_family_validation():
    with pytest.raises(InvalidInputError):
        ExpertFamily.uniform(c1=0.0)
    with pytest.raises(InvalidInputError):
        ExpertFamily.beta(a_pi=0.0)
    with pytest.raises(InvalidInputError):
        ExpertFamily.discrete([0.1, 0.2], prior=[0.5, 0.4])
    with pytest.raises(InvalidInputError):
        ExpertFamily.discrete([0.1, 0.2], atoms=[1.0, 0.0])
    assert ExpertFamily("affine_beta", a_pi=2.0, b_pi=2.0).kind is FamilyKind.AFFINE_BETA


def test_with_a_hat_moves_the_proposals():
    moved = TWENTY_EXPERTS.with_a_hat(0.5)
    np.testing.assert_allclose(moved.rho_values, TWENTY_EXPERTS.rho_values + 0.5)
    assert UNIFORM.with_a_hat(0.2).rho_range() == pytest.approx((0.2, 1.2))


def test_fixed_point_with_constant_proposals():
    family = ExpertFamily.discrete([0.3, 0.3])
    theta = solve_fixed_point(0.2, 0.2, 1.0, family)
    assert theta == pytest.approx(0.5, abs=1e-9)


def test_fixed_point_residual(rng):
    for family in (UNIFORM, BETA_2_3, TWENTY_EXPERTS):
        for _ in range(20):
            a_hat = rng.uniform(-0.5, 1.5)
            alpha, gamma = rng.uniform(0.01, 5.0), rng.uniform(0.5, 2.0)
            theta = solve_fixed_point(a_hat, alpha, gamma, family)
            residual = tilted_mean(theta, family) - a_hat - alpha / gamma * theta
            assert abs(residual) <= 1e-9 * (1 + abs(a_hat))


def test_fixed_point_vanishes_for_large_alpha():
    theta = solve_fixed_point(0.0, 1.0e6, 1.0, UNIFORM)
    assert abs(theta) < 1e-6
    assert tilted_mean(theta, UNIFORM) == pytest.approx(tilted_mean(0.0, UNIFORM), abs=1e-6)


def test_fixed_point_is_capped(caplog):
    with caplog.at_level(logging.WARNING):
        theta = solve_fixed_point(0.0, 1.0e-14, 1.0, UNIFORM)
    assert theta == 1.0e6
    assert "capped" in caplog.text


def test_fixed_point_rejects_nonpositive_alpha():
    with pytest.raises(InvalidInputError):
        solve_fixed_point(0.0, 0.0, 1.0, UNIFORM)


def test_fixed_point_kl_decreases_in_alpha(rng):
    families = (UNIFORM, BETA_2_3, TWENTY_EXPERTS, ExpertFamily.uniform(a_hat=0.08, c1=0.5))
    violations = 0
    for _ in range(100):
        family = families[rng.integers(len(families))]
        lo, hi = family.rho_range()
        a_hat = rng.uniform(lo - 0.2, hi + 0.2)
        gamma = rng.uniform(0.5, 2.0)
        alpha = 10 ** rng.uniform(-2, 1)
        kl_1 = kl_at(solve_fixed_point(a_hat, alpha, gamma, family), family)
        kl_2 = kl_at(solve_fixed_point(a_hat, 2 * alpha, gamma, family), family)
        violations += kl_2 > kl_1 + 1e-12
    assert violations == 0


@pytest.mark.parametrize(
    "alpha, theta, delta",
    [(0.23388, 1.013811, 0.237110), (0.0138132, 9.486238, 0.131035), (5.27449e-5, 192.478831, 0.010152)],
)
def test_alpha_backout_on_published_rows(alpha, theta, delta):
    assert backout_alpha(theta, delta) == pytest.approx(alpha, rel=1e-4)
    assert alpha * theta == pytest.approx(delta, rel=1e-4)


def test_alpha_backout_rejects_zero_tilt():
    with pytest.raises(InvalidInputError):
        backout_alpha(0.0, 0.1)


def test_budget_calibration_pattern():
    config = AggregationConfig()
    solutions = [calibrate_config(config, budget) for budget in config.budgets]
    for budget, solution in zip(config.budgets, solutions):
        assert solution.kl * config.grid.horizon == pytest.approx(budget, abs=1e-8)
        assert solution.budget_binding
        assert solution.alpha * solution.theta == pytest.approx(solution.gamma * solution.delta_shift, rel=1e-12)
    thetas = [solution.theta for solution in solutions]
    shifts = [solution.delta_shift for solution in solutions]
    assert all(a < b for a, b in zip(thetas, thetas[1:]))
    assert all(a > b for a, b in zip(shifts, shifts[1:]))


def test_budget_on_a_longer_horizon():
    solution = calibrate_budget(0.5, 2.0, UNIFORM)
    assert kl_at(solution.theta, UNIFORM) * 2.0 == pytest.approx(0.5, abs=1e-8)


def test_budget_with_negative_tilt():
    # prior mean 0.1 sits below the filtered drift 0.5
    below = ExpertFamily.discrete([0.0, 1.0], prior=[0.9, 0.1], a_hat=0.5)
    solution = calibrate_budget(0.1, 1.0, below)
    assert solution.theta < 0
    assert solution.kl == pytest.approx(0.1, abs=1e-8)


def test_slack_budget_returns_the_prior():
    family = ExpertFamily.discrete([0.2, 0.2], a_hat=0.2)
    solution = calibrate_budget(1.0, 1.0, family)
    assert solution.theta == 0.0
    assert not solution.budget_binding
    assert solution.alpha == 0.0


def test_budget_validation():
    with pytest.raises(InvalidInputError):
        calibrate_budget(0.0, 1.0, UNIFORM)
    with pytest.raises(InvalidInputError):
        calibrate_budget(1.0, 0.0, UNIFORM)
    with pytest.raises(InvalidInputError):
        calibrate_budget(1.0, 1.0, [UNIFORM, UNIFORM], BudgetMode.CONSTANT_THETA)


def test_alpha_sweep_agrees_with_constant_tilt():
    family = ExpertFamily.uniform(a_hat=0.08, c1=0.5)
    constant = calibrate_budget(0.5, 1.0, family)
    sweep = calibrate_budget(0.5, 1.0, [family] * 10, BudgetMode.ALPHA_SWEEP)
    assert sweep.budget_binding
    assert len(sweep.per_time) == 10
    assert sweep.theta == pytest.approx(constant.theta, rel=1e-6)
    assert sweep.alpha == pytest.approx(constant.alpha, rel=1e-6)
    assert sweep.kl == pytest.approx(0.5, abs=1e-8)


def test_alpha_sweep_over_moving_filtered_drift():
    families = [ExpertFamily.uniform(a_hat=a, c1=0.5) for a in np.linspace(0.0, 0.2, 8)]
    solution = calibrate_budget(1.0, 1.0, families, BudgetMode.ALPHA_SWEEP)
    assert np.mean([step.kl for step in solution.per_time]) == pytest.approx(1.0, abs=1e-8)
    assert len({step.alpha for step in solution.per_time}) == 1


def test_alpha_sweep_binds_at_large_budgets():
    # K=20 needs theta near 2.6e9, far past the direct fixed-point cap
    family = ExpertFamily.uniform(a_hat=0.08, c1=0.5)
    constant = calibrate_budget(20.0, 1.0, family)
    sweep = calibrate_budget(20.0, 1.0, [family] * 10, BudgetMode.ALPHA_SWEEP)
    assert sweep.budget_binding
    assert sweep.kl == pytest.approx(20.0, abs=1e-8)
    assert sweep.theta == pytest.approx(constant.theta, rel=1e-6)
    assert sweep.theta > 1.0e6


def test_alpha_sweep_rejects_an_unattainable_budget():
    family = ExpertFamily.uniform(a_hat=0.08, c1=0.5)
    with pytest.raises(NumericalFailureError) as info:
        calibrate_budget(100.0, 1.0, [family] * 4, BudgetMode.ALPHA_SWEEP)
    assert info.value.extensions["K"] == 100.0


def test_beta_prior_calibrates_at_large_budgets():
    family = ExpertFamily.beta(a_hat=0.08, c1=0.5, a_pi=2.0, b_pi=3.0)
    solution = calibrate_budget(20.0, 1.0, family)
    assert solution.budget_binding
    assert solution.kl == pytest.approx(20.0, abs=1e-8)
    # tilted law near Gamma(2, z) at z = theta c1, so KL ~ 2 log z - 2 - log 12
    expected = 2.0 * math.exp((22.0 + math.log(12.0)) / 2.0)
    assert solution.theta == pytest.approx(expected, rel=1e-3)


def test_tilt_solution_validation():
    with pytest.raises(InvalidInputError):
        TiltSolution(theta=1.0, psi=0.1, kl=-1.0, alpha=0.1, budget_binding=True)


def test_kalman_bucy_reaches_the_riccati_root():
    model = FilterModel(kappa_a=1.0, a_bar=0.0, sigma_a=1.0, R=1.0, P0=0.0)
    grid = TimeGrid(horizon=20.0, n_steps=20_000)
    _, variance = kalman_bucy(np.zeros(grid.n_steps), model, grid)
    assert variance[0] == 0.0
    assert variance[-1] == pytest.approx(math.sqrt(2.0) - 1, abs=1e-4)


def test_kalman_bucy_stays_at_a_consistent_mean():
    model = FilterModel()
    grid = TimeGrid(n_steps=100)
    a_hat, _ = kalman_bucy(np.full((grid.n_steps, 2), model.a_bar * grid.dt), model, grid)
    np.testing.assert_allclose(a_hat, model.a_bar, atol=1e-14)
    with pytest.raises(InvalidInputError):
        kalman_bucy(np.zeros(3), model, grid)
    with pytest.raises(InvalidInputError):
        FilterModel(R=0.0)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        AggregationConfig(beta=1.5)
    with pytest.raises(InvalidInputError):
        AggregationConfig(budgets=(1.0, -1.0))
    with pytest.raises(InvalidInputError):
        AggregationConfig(prior="discrete")
    assert AggregationConfig(prior="affine_beta", a_pi=2.0).family.kind is FamilyKind.AFFINE_BETA


def test_large_budget_collapses_onto_the_filter():
    result = aggregation_experiment(AggregationConfig(n_paths=30, seed=3))
    assert result.solutions.columns == SOLUTION_COLUMNS
    assert result.paths.columns == PATH_COLUMNS
    gaps = result.paths.column("sup_log_gap")
    bounds = result.paths.column("collapse_bound")
    assert np.all(gaps <= bounds + 1e-12)
    small = result.paths.where("K", 0.01).column("sup_log_gap")
    large = result.paths.where("K", 20.0).column("sup_log_gap")
    assert np.all(small > large)
    assert large.mean() < 0.05 * small.mean()

    for budget in (0.01, 20.0):
        for bundle in result.bundles[budget]:
            # |e^x - e^y| <= max(e^x, e^y) |x - y|
            top = max(bundle.synthetic_path.max(), bundle.filtered_path.max())
            assert bundle.diagnostics["sup_price_gap"] <= top * (bundle.diagnostics["sup_log_gap"] + 1e-12)
    small_price = result.paths.where("K", 0.01).column("sup_price_gap")
    large_price = result.paths.where("K", 20.0).column("sup_price_gap")
    assert large_price.mean() < 0.1 * small_price.mean()
    assert result.mean_corr >= 0.5


def test_triplet_shares_true_and_filtered_paths():
    config = AggregationConfig(grid=TimeGrid(n_steps=60))
    triplet = simulate_aggregation_triplet(config, budgets=(0.01, 20.0), path_index=2)
    first, second = triplet[0.01], triplet[20.0]
    np.testing.assert_array_equal(first.true_path, second.true_path)
    np.testing.assert_array_equal(first.filtered_path, second.filtered_path)
    assert first.path_index == 2
    assert first.sup_sq_gap("filtered") > second.sup_sq_gap("filtered")
