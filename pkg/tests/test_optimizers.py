"""Mean-variance, tracking error, turnover, Black-Litterman and implied covariance."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.core import AssetUniverse, correlation_to_covariance, pairwise_correlation
from artifact.optimizers import (
    BlViews,
    Constraints,
    InfeasibleError,
    add_risk_free,
    bl_calibrate_tau,
    black_litterman,
    jagannathan_ma_covariance,
    max_tracking_error,
    minimum_variance,
    most_diversified,
    sharpe_ratio,
    solve_gamma_problem,
    solve_sigma_target,
    solve_tracking_error,
    solve_turnover_constrained,
    solve_with_transaction_costs,
    tangency_portfolio,
    tracking_error_frontier,
)
from artifact.riskparity import closed_forms

from conftest import random_cov


def _vol(x, cov):
    return math.sqrt(x @ cov @ x)


@pytest.mark.parametrize("target, gamma, weights", [
    (0.15, 0.62, [45.59, 24.74, 29.67, 0.0]),
    (0.20, 1.10, [24.88, 4.96, 70.15, 0.0]),
])
def test_long_only_sigma_targets(frontier_universe, target, gamma, weights):
    x, g = solve_sigma_target(frontier_universe, target, Constraints.long_only(4))
    np.testing.assert_allclose(100 * x, weights, atol=0.05)
    assert g == pytest.approx(gamma, abs=0.01)
    assert _vol(x, frontier_universe.cov) == pytest.approx(target, abs=1e-6)


def test_long_only_target_beyond_reach(frontier_universe):
    with pytest.raises(InfeasibleError, match="There is no solution when the target volatility"):
        solve_sigma_target(frontier_universe, 0.40, Constraints.long_only(4))


@pytest.mark.parametrize("gamma, weights", [
    (0.25, [18.23, -1.63, 34.71, -18.93, 67.62]),
    (0.50, [36.46, -3.26, 69.42, -37.86, 35.24]),
])
def test_frontier_with_cash(frontier_universe, gamma, weights):
    uni = add_risk_free(frontier_universe, 0.03)
    x = solve_gamma_problem(uni, gamma)
    np.testing.assert_allclose(100 * x, weights, atol=0.05)


def test_cash_frontier_risky_part_is_tangency(frontier_universe):
    uni = add_risk_free(frontier_universe, 0.03)
    x = solve_gamma_problem(uni, 0.7)[:4]
    np.testing.assert_allclose(x / x.sum(), tangency_portfolio(frontier_universe, 0.03), atol=1e-10)


def test_constrained_tangency_matches_closed_form_when_slack(frontier_universe):
    loose = Constraints(lower=-10.0, upper=10.0)
    np.testing.assert_allclose(tangency_portfolio(frontier_universe, 0.03, loose),
                               tangency_portfolio(frontier_universe, 0.03), atol=1e-6)


def test_tangency_beats_frontier_points(frontier_universe):
    sr = sharpe_ratio(tangency_portfolio(frontier_universe, 0.03), frontier_universe, 0.03)
    for g in (0.1, 0.5, 2.0):
        assert sharpe_ratio(solve_gamma_problem(frontier_universe, g), frontier_universe, 0.03) <= sr + 1e-12


def test_mdp_equals_mv_with_equal_vols():
    rho = pairwise_correlation(4, [0.1, 0.4, 0.5, 0.7, 0.4, 0.8])
    uni = AssetUniverse(np.zeros(4), np.full(4, 0.2), rho)
    np.testing.assert_allclose(most_diversified(uni), minimum_variance(uni), atol=1e-12)


def test_mv_closed_form_constant_correlation():
    sigma = np.array([0.1, 0.15, 0.2, 0.25])
    rho = 0.3
    uni = AssetUniverse(np.zeros(4), sigma, np.full((4, 4), rho) + (1 - rho) * np.eye(4))
    np.testing.assert_allclose(minimum_variance(uni),
                               closed_forms("mv_constant_correlation", sigma=sigma, rho=rho), atol=1e-12)


def test_jm_indefinite_example():
    sigma = np.array([0.15, 0.15, 0.05])
    uni = AssetUniverse(np.zeros(3), sigma, pairwise_correlation(3, [0.5, 0.2, 0.2]))
    wide = jagannathan_ma_covariance(uni, Constraints(lower=0.2, upper=0.8))
    np.testing.assert_allclose(wide.x, [0.2, 0.2, 0.6], atol=1e-10)
    assert wide.smallest_eigenvalue < 0
    tight = jagannathan_ma_covariance(uni, Constraints(lower=0.2, upper=0.5))
    np.testing.assert_allclose(tight.x, [0.25, 0.25, 0.5], atol=1e-10)
    assert tight.smallest_eigenvalue > 0


def test_jm_without_binding_constraints_is_identity(frontier_universe):
    jm = jagannathan_ma_covariance(frontier_universe, Constraints(lower=-5.0, upper=5.0))
    np.testing.assert_allclose(jm.cov, frontier_universe.cov, atol=1e-14)


def test_jm_general_inequalities(frontier_universe):
    # x1 + x2 <= 0.9 written as -x1 - x2 >= -0.9
    c = Constraints(C=[[-1, -1, 0, 0]], D=[-0.9], lower=0.0)
    jm = jagannathan_ma_covariance(frontier_universe, c)
    w = np.linalg.solve(jm.cov, np.ones(4))
    np.testing.assert_allclose(w / w.sum(), minimum_variance(frontier_universe, c), atol=1e-8)


def test_tracking_error_zero_gamma_is_benchmark(frontier_universe):
    b = np.full(4, 0.25)
    np.testing.assert_allclose(solve_tracking_error(frontier_universe, b, 0.0), b, atol=1e-12)


def test_unconstrained_te_frontier_is_leveraged(frontier_universe):
    b = np.full(4, 0.25)
    cov = frontier_universe.cov
    x0, _ = tracking_error_frontier(frontier_universe, b, te_target=0.01)
    for te in (0.05, 0.10, 0.35):
        x, _ = tracking_error_frontier(frontier_universe, b, te_target=te)
        lev = te / _vol(x0 - b, cov)
        np.testing.assert_allclose(x, b + lev * (x0 - b), atol=1e-5)


def test_long_only_max_tracking_error_is_a_vertex(frontier_universe):
    b = np.full(4, 0.25)
    x, te = max_tracking_error(frontier_universe, b, Constraints.long_only(4))
    assert np.isclose(x, 1).sum() == 1 and np.isclose(x, 0).sum() == 3
    cov = frontier_universe.cov
    assert te == pytest.approx(max(_vol(e - b, cov) for e in np.eye(4)))


def test_te_target_above_max_is_infeasible(frontier_universe):
    b = np.full(4, 0.25)
    with pytest.raises(InfeasibleError):
        tracking_error_frontier(frontier_universe, b, te_target=0.9, constraints=Constraints.long_only(4))


def test_turnover_limits(frontier_universe):
    x0 = np.full(4, 0.25)
    lo = Constraints.long_only(4)
    free = solve_gamma_problem(frontier_universe, 0.3, lo)
    np.testing.assert_allclose(solve_turnover_constrained(frontier_universe, 0.3, x0, 2.0, lo), free, atol=1e-8)
    np.testing.assert_allclose(solve_turnover_constrained(frontier_universe, 0.3, x0, 0.0, lo), x0, atol=1e-10)
    x = solve_turnover_constrained(frontier_universe, 0.3, x0, 0.2, lo)
    assert np.abs(x - x0).sum() <= 0.2 + 1e-9


def test_zero_costs_reduce_to_gamma_problem(frontier_universe):
    x0 = np.full(4, 0.25)
    res = solve_with_transaction_costs(frontier_universe, 0.3, x0, 0.0, 0.0)
    np.testing.assert_allclose(res.x, solve_gamma_problem(frontier_universe, 0.3, Constraints.long_only(4)),
                               atol=1e-8)
    assert res.cost == pytest.approx(0.0, abs=1e-12)


def test_costs_are_charged_against_budget(frontier_universe):
    x0 = np.full(4, 0.25)
    res = solve_with_transaction_costs(frontier_universe, 0.5, x0, 0.01, 0.01)
    assert res.x.sum() + res.cost == pytest.approx(1.0, abs=1e-10)
    assert res.net_return == pytest.approx(res.gross_return - res.cost)


def test_bl_calibration_zero_target(frontier_universe):
    views = BlViews(np.eye(4), [0.07, 0.02, 0.04, 0.09], np.eye(4) * 1e-4, 0.0)
    assert bl_calibrate_tau(frontier_universe, np.full(4, 0.25), 0.03, views, 0.0) == 0.0


def test_bl_calibration_hits_target(frontier_universe):
    b = np.full(4, 0.25)
    views = BlViews(np.eye(4), [0.07, 0.02, 0.04, 0.09], np.eye(4) * 1e-4, 0.0)
    tau = bl_calibrate_tau(frontier_universe, b, 0.03, views, 0.02)
    x = black_litterman(frontier_universe, b, 0.03, BlViews(views.P, views.Q, views.Omega, tau)).x
    assert _vol(x - b, frontier_universe.cov) == pytest.approx(0.02, abs=1e-6)


def test_constraints_from_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"budget": True, "bounds": {"lower": 0, "upper": 0.5},
                                "ineq": {"C": [[1, 1, 0]], "D": [0.3]}}))
    c = Constraints.from_json(path)
    assert c.budget and c.upper == 0.5 and c.C == [[1, 1, 0]]
    assert not c.unconstrained


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1), st.floats(0.0, 2.0))
def test_gamma_problem_matches_closed_form(n, seed, gamma):
    rng = np.random.default_rng(seed)
    cov = random_cov(rng, n)
    mu = rng.uniform(0.0, 0.1, n)
    uni = AssetUniverse.from_covariance(cov, mu)
    inv = np.linalg.inv(cov)
    ones = np.ones(n)
    nu = (1 - gamma * ones @ inv @ mu) / (ones @ inv @ ones)
    expected = inv @ (gamma * mu + nu * ones)
    np.testing.assert_allclose(solve_gamma_problem(uni, gamma), expected, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.11, 0.3))
def test_sigma_target_hits_volatility(seed, target):
    rng = np.random.default_rng(seed)
    sigma = rng.uniform(0.1, 0.3, 4)
    uni = AssetUniverse(rng.uniform(0.02, 0.1, 4), sigma,
                        pairwise_correlation(4, rng.uniform(0.0, 0.5, 6)))
    mv = _vol(minimum_variance(uni), uni.cov)
    if target <= mv:
        with pytest.raises(InfeasibleError):
            solve_sigma_target(uni, target)
    else:
        x, _ = solve_sigma_target(uni, target)
        assert _vol(x, uni.cov) == pytest.approx(target, abs=1e-6)


def test_two_asset_mv_formula():
    cov = correlation_to_covariance(np.array([0.1, 0.2]), np.array([[1, 0.3], [0.3, 1]]))
    uni = AssetUniverse.from_covariance(cov)
    s1, s2, c = 0.1, 0.2, 0.3 * 0.02
    x1 = (s2 ** 2 - c) / (s1 ** 2 + s2 ** 2 - 2 * c)
    assert minimum_variance(uni)[0] == pytest.approx(x1)
