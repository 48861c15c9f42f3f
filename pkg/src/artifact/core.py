"""Domain types, universe validation and covariance assembly.

Everything downstream works with plain numpy arrays; the dataclasses here
exist to validate inputs once and carry names around for reporting.
All rates and weights are decimals (0.15 means 15%).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

PSD_TOL = 1e-10


class ValidationError(ValueError):
    """Raised when an input object violates its invariants."""


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or inf")
    return arr


def _as_square(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or inf")
    return arr


def check_psd(matrix: np.ndarray, name: str = "matrix", tol: float = PSD_TOL) -> float:
    """Return the smallest eigenvalue, raising if it is below ``-tol``."""
    lam_min = float(np.linalg.eigvalsh(matrix).min())
    if lam_min < -tol:
        raise ValidationError(
            f"{name} is not positive semi-definite: smallest eigenvalue {lam_min:.6e}"
        )
    return lam_min


def correlation_to_covariance(sigma, rho) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    return np.asarray(rho, dtype=float) * np.outer(sigma, sigma)


def covariance_to_correlation(cov) -> tuple[np.ndarray, np.ndarray]:
    """Split a covariance matrix into (vols, correlation).

    Zero-variance assets get a unit diagonal and zero off-diagonal correlation.
    """
    cov = np.asarray(cov, dtype=float)
    sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    inv = np.where(sigma > 0, 1.0 / np.where(sigma > 0, sigma, 1.0), 0.0)
    rho = cov * np.outer(inv, inv)
    np.fill_diagonal(rho, 1.0)
    return sigma, rho


def pairwise_correlation(n: int, upper: Sequence[float]) -> np.ndarray:
    """Build a correlation matrix from its upper triangle read row by row.

    For n=4 the order is (r12, r13, r14, r23, r24, r34).
    """
    upper = list(upper)
    if len(upper) != n * (n - 1) // 2:
        raise ValidationError(f"expected {n * (n - 1) // 2} correlations, got {len(upper)}")
    rho = np.eye(n)
    iu = np.triu_indices(n, 1)
    rho[iu] = upper
    rho.T[iu] = upper
    return rho


def constant_correlation(n: int, rho: float) -> np.ndarray:
    c = np.full((n, n), float(rho))
    np.fill_diagonal(c, 1.0)
    return c


@dataclass(frozen=True, eq=False)
class AssetUniverse:
    """Names, expected returns, volatilities and correlations of n assets."""

    names: tuple
    mu: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    _cov: np.ndarray = field(init=False, repr=False, compare=False)

    def __init__(self, mu, sigma, rho, names: Sequence[str] | None = None):
        mu = _as_vector(mu, "mu")
        sigma = _as_vector(sigma, "sigma")
        rho = _as_square(rho, "rho")
        n = sigma.size
        if names is None:
            names = [f"A{i + 1}" for i in range(n)]
        names = tuple(str(s) for s in names)
        if not (mu.size == n == rho.shape[0] == len(names)):
            raise ValidationError(
                f"dimension mismatch: names={len(names)}, mu={mu.size}, "
                f"sigma={n}, rho={rho.shape[0]}"
            )
        if np.any(sigma < 0):
            raise ValidationError("volatilities must be nonnegative")
        if not np.allclose(rho, rho.T, atol=1e-12):
            raise ValidationError("correlation matrix is not symmetric")
        if not np.allclose(np.diag(rho), 1.0, atol=1e-12):
            raise ValidationError("correlation matrix must have a unit diagonal")
        if np.any(np.abs(rho) > 1.0 + 1e-12):
            raise ValidationError("correlations must lie in [-1, 1]")
        check_psd(rho, "correlation matrix")
        for arr in (mu, sigma, rho):
            arr.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "rho", rho)
        cov = correlation_to_covariance(sigma, rho)
        cov = 0.5 * (cov + cov.T)
        cov.setflags(write=False)
        object.__setattr__(self, "_cov", cov)

    @property
    def n(self) -> int:
        return self.sigma.size

    @property
    def cov(self) -> np.ndarray:
        return self._cov

    @classmethod
    def from_covariance(cls, cov, mu=None, names=None) -> "AssetUniverse":
        cov = _as_square(cov, "covariance")
        check_psd(cov, "covariance matrix")
        sigma, rho = covariance_to_correlation(cov)
        if mu is None:
            mu = np.zeros(sigma.size)
        return cls(mu, sigma, rho, names)

    def with_mu(self, mu) -> "AssetUniverse":
        return AssetUniverse(mu, self.sigma, self.rho, self.names)


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    values: np.ndarray

    def __post_init__(self):
        v = _as_square(self.values, "covariance")
        if not np.allclose(v, v.T, atol=1e-14, rtol=1e-10):
            raise ValidationError("covariance matrix is not symmetric")
        check_psd(v, "covariance matrix")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def smallest_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.values).min())


@dataclass(frozen=True, eq=False)
class Portfolio:
    weights: np.ndarray
    names: tuple = ()
    fully_invested: bool = False

    def __post_init__(self):
        w = _as_vector(self.weights, "weights").copy()
        if self.names and len(self.names) != w.size:
            raise ValidationError("portfolio names and weights differ in length")
        if self.fully_invested and abs(w.sum() - 1.0) > 1e-10:
            raise ValidationError(f"weights sum to {w.sum():.12f}, expected 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "names", tuple(self.names))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)

    def __len__(self):
        return self.weights.size


@dataclass(frozen=True, eq=False)
class RiskBudget:
    budgets: np.ndarray

    def __post_init__(self):
        b = _as_vector(self.budgets, "budgets").copy()
        if np.any(b < 0):
            raise ValidationError("risk budgets must be nonnegative")
        if abs(b.sum() - 1.0) > 1e-10:
            raise ValidationError(f"risk budgets sum to {b.sum():.12f}, expected 1")
        if not np.any(b > 0):
            raise ValidationError("at least one risk budget must be positive")
        b.setflags(write=False)
        object.__setattr__(self, "budgets", b)

    @classmethod
    def normalized(cls, values) -> "RiskBudget":
        v = np.asarray(values, dtype=float)
        return cls(v / v.sum())

    @classmethod
    def equal(cls, n: int) -> "RiskBudget":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True, eq=False)
class RiskDecomposition:
    """Euler decomposition of a risk measure across assets or factors."""

    weights: np.ndarray
    marginal: np.ndarray
    contributions: np.ndarray
    risk_total: float

    @property
    def shares(self) -> np.ndarray:
        if self.risk_total == 0:
            return np.zeros_like(self.contributions)
        return self.contributions / self.risk_total

    @property
    def euler_gap(self) -> float:
        """Relative gap between the summed contributions and the total."""
        scale = max(abs(self.risk_total), 1e-300)
        return abs(self.contributions.sum() - self.risk_total) / scale


def build_covariance(universe: AssetUniverse) -> CovarianceMatrix:
    """Assemble Sigma_ij = rho_ij sigma_i sigma_j."""
    return CovarianceMatrix(universe.cov)


def portfolio_moments(x, universe: AssetUniverse) -> tuple[float, float]:
    """Expected return and volatility of the portfolio ``x``."""
    x = np.asarray(x, dtype=float)
    if x.size != universe.n:
        raise ValidationError(f"portfolio has {x.size} weights, universe has {universe.n}")
    mean = float(universe.mu @ x)
    var = float(x @ universe.cov @ x)
    return mean, float(np.sqrt(max(var, 0.0)))


def volatility(x, cov) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(max(float(x @ cov @ x), 0.0)))


# -- file formats ----------------------------------------------------------

def load_universe_json(path) -> AssetUniverse:
    data = json.loads(Path(path).read_text())
    try:
        assets = data["assets"]
        names = [a["name"] for a in assets]
        mu = [a.get("mu", 0.0) for a in assets]
        sigma = [a["sigma"] for a in assets]
        rho = data["correlation"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed universe file {path}: {exc}") from exc
    return AssetUniverse(mu, sigma, rho, names)


def universe_to_json(universe: AssetUniverse) -> str:
    payload = {
        "assets": [
            {"name": n, "mu": float(m), "sigma": float(s)}
            for n, m, s in zip(universe.names, universe.mu, universe.sigma)
        ],
        "correlation": universe.rho.tolist(),
    }
    return json.dumps(payload, indent=2)


def load_portfolio_csv(path, universe: AssetUniverse | None = None) -> Portfolio:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "weight" not in rows[0]:
        raise ValidationError(f"portfolio file {path} needs a 'name,weight' header")
    names = [r.get("name", f"A{i + 1}") for i, r in enumerate(rows)]
    weights = np.array([float(r["weight"]) for r in rows])
    if universe is not None:
        if set(names) == set(universe.names):
            order = {n: i for i, n in enumerate(names)}
            weights = weights[[order[n] for n in universe.names]]
            names = list(universe.names)
        elif len(names) != universe.n:
            raise ValidationError("portfolio does not match the universe")
    return Portfolio(weights, tuple(names))
