"""Universe construction, validation and file formats."""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.core import (
    AssetUniverse,
    CovarianceMatrix,
    Portfolio,
    RiskBudget,
    ValidationError,
    constant_correlation,
    covariance_to_correlation,
    load_portfolio_csv,
    load_universe_json,
    pairwise_correlation,
    portfolio_moments,
    universe_to_json,
)


def test_pairwise_order_is_row_major():
    rho = pairwise_correlation(4, [0.1, 0.4, 0.5, 0.7, 0.4, 0.8])
    assert rho[0, 1] == 0.1 and rho[0, 3] == 0.5 and rho[1, 2] == 0.7 and rho[2, 3] == 0.8
    assert np.array_equal(rho, rho.T)


def test_pairwise_wrong_length():
    with pytest.raises(ValidationError, match="expected 6"):
        pairwise_correlation(4, [0.1, 0.2])


def test_frontier_universe_moments(frontier_universe):
    mu, sigma = portfolio_moments(np.full(4, 0.25), frontier_universe)
    assert mu == pytest.approx(0.0625)
    assert sigma == pytest.approx(np.sqrt(frontier_universe.cov.sum()) / 4)


@pytest.mark.parametrize("rho, msg", [
    ([[1, 0.5], [0.4, 1]], "symmetric"),
    ([[1, 1.2], [1.2, 1]], "\\[-1, 1\\]"),
    ([[0.9, 0.1], [0.1, 1]], "unit diagonal"),
])
def test_universe_rejects_bad_correlation(rho, msg):
    with pytest.raises(ValidationError, match=msg):
        AssetUniverse([0, 0], [0.1, 0.2], rho)


def test_universe_rejects_indefinite_correlation():
    rho = pairwise_correlation(3, [0.9, -0.9, 0.9])
    with pytest.raises(ValidationError):
        AssetUniverse([0, 0, 0], [0.1, 0.1, 0.1], rho)


def test_universe_dimension_mismatch():
    with pytest.raises(ValidationError, match="dimension mismatch"):
        AssetUniverse([0, 0, 0], [0.1, 0.2], np.eye(2))


def test_universe_is_immutable(frontier_universe):
    with pytest.raises(ValueError):
        frontier_universe.mu[0] = 1.0


def test_covariance_matrix_psd_check():
    with pytest.raises(ValidationError):
        CovarianceMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert CovarianceMatrix(np.eye(2)).smallest_eigenvalue == pytest.approx(1.0)


def test_risk_budget_validation():
    assert RiskBudget.normalized([1, 1, 2]).budgets.tolist() == [0.25, 0.25, 0.5]
    with pytest.raises(ValidationError):
        RiskBudget([0.5, 0.6])
    with pytest.raises(ValidationError):
        RiskBudget([1.5, -0.5])


def test_portfolio_fully_invested_check():
    with pytest.raises(ValidationError, match="sum"):
        Portfolio([0.5, 0.4], fully_invested=True)
    assert len(Portfolio([0.5, 0.5], fully_invested=True)) == 2


def test_json_round_trip(tmp_path, frontier_universe):
    path = tmp_path / "u.json"
    path.write_text(universe_to_json(frontier_universe))
    back = load_universe_json(path)
    np.testing.assert_allclose(back.cov, frontier_universe.cov, atol=1e-15)
    np.testing.assert_allclose(back.mu, frontier_universe.mu)


def test_json_malformed(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"assets": [{"name": "a"}]}))
    with pytest.raises(ValidationError, match="malformed"):
        load_universe_json(path)


def test_portfolio_csv_reorders_by_name(tmp_path, frontier_universe):
    path = tmp_path / "w.csv"
    path.write_text("name,weight\nA2,0.2\nA1,0.1\nA4,0.4\nA3,0.3\n")
    p = load_portfolio_csv(path, frontier_universe)
    assert p.weights.tolist() == [0.1, 0.2, 0.3, 0.4]


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.floats(-0.05, 0.95))
def test_constant_correlation_round_trip(n, rho):
    c = constant_correlation(n, rho)
    sigma = np.linspace(0.1, 0.3, n)
    cov = c * np.outer(sigma, sigma)
    s, r = covariance_to_correlation(cov)
    np.testing.assert_allclose(s, sigma, atol=1e-14)
    np.testing.assert_allclose(r, c, atol=1e-12)
