"""Factor models, eigenfactors, bond-portfolio risk and the Frazzini-Pedersen equilibrium."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import qr
from scipy.optimize import minimize

from .analytics import risk_decomposition_volatility
from .core import AssetUniverse, RiskDecomposition, ValidationError, check_psd
from .measures import norm_ppf
from .qp import QpProblem, solve_qp


# -- linear factor models -----------------------------------------------------

@dataclass
class FactorModel:
    """Sigma = A Omega A' + D with loadings A (n x m)."""

    A: np.ndarray
    Omega: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.Omega = np.atleast_2d(np.asarray(self.Omega, dtype=float))
        D = np.asarray(self.D, dtype=float)
        n, m = self.A.shape
        if D.ndim == 1:
            D = np.diag(D)
        if D.shape != (n, n) or not np.allclose(D, np.diag(np.diag(D))):
            raise ValidationError("D must be an n x n diagonal matrix")
        if np.any(np.diag(D) < 0):
            raise ValidationError("specific variances must be nonnegative")
        if self.Omega.shape != (m, m):
            raise ValidationError(f"Omega must be {m} x {m}")
        check_psd(self.Omega, "factor covariance Omega")
        self.D = D
        check_psd(self.cov, "implied covariance A Omega A' + D")

    @property
    def cov(self) -> np.ndarray:
        return self.A @ self.Omega @ self.A.T + self.D

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @classmethod
    def from_json(cls, path) -> "FactorModel":
        d = json.loads(Path(path).read_text())
        return cls(d["A"], d["Omega"], d["D"])


@dataclass
class PseudoInverses:
    A_plus: np.ndarray
    B_plus: np.ndarray
    B_tilde: np.ndarray
    B_tilde_plus: np.ndarray


def pseudo_inverses(model: FactorModel) -> PseudoInverses:
    """A+ = (A'A)^-1 A', B+ = (A+)' and an orthonormal B~ with B~ A = 0.

    B~ is any orthonormal basis of the complement of span(A); totals are
    basis independent while individual specific factors are not.
    """
    A = model.A
    n, m = A.shape
    if n < m or np.linalg.matrix_rank(A) < m:
        raise ValidationError("loading matrix must have full column rank")
    A_plus = np.linalg.solve(A.T @ A, A.T)
    B_plus = A_plus.T
    proj = np.eye(n) - A @ A_plus
    if n == m:
        B_tilde = np.zeros((0, n))
    else:
        q, r, _ = qr(proj, pivoting=True)
        B_tilde = q[:, : n - m].T
    return PseudoInverses(A_plus, B_plus, B_tilde, B_tilde.T)


@dataclass
class FactorDecomposition:
    y: np.ndarray
    y_specific: np.ndarray
    mr: np.ndarray
    mr_specific: np.ndarray
    rc: np.ndarray
    rc_specific: np.ndarray
    risk_total: float

    @property
    def shares(self) -> np.ndarray:
        return self.rc / self.risk_total

    @property
    def shares_specific(self) -> np.ndarray:
        return self.rc_specific / self.risk_total

    @property
    def euler_gap(self) -> float:
        s = self.rc.sum() + self.rc_specific.sum()
        return abs(s - self.risk_total) / max(abs(self.risk_total), 1e-300)


def factor_risk_decomposition(x, model: FactorModel, risk: str = "volatility",
                              alpha: float = 0.99, mu=None,
                              pinv: PseudoInverses | None = None) -> FactorDecomposition:
    """Risk contributions of common factors (A+ grad) and specific factors (B~ grad)."""
    x = np.asarray(x, dtype=float)
    p = pinv or pseudo_inverses(model)
    cov = model.cov
    s = math.sqrt(max(float(x @ cov @ x), 0.0))
    if s <= 0:
        raise ValidationError("portfolio has zero risk")
    if risk == "volatility":
        grad, total = cov @ x / s, s
    elif risk == "gaussian-var":
        m = np.zeros(x.size) if mu is None else np.asarray(mu, float)
        z = norm_ppf(alpha)
        grad = -m + z * cov @ x / s
        total = float(-m @ x + z * s)
    else:
        raise ValidationError(f"unknown risk measure {risk!r}")
    y = model.A.T @ x
    ys = p.B_tilde @ x
    mr = p.A_plus @ grad
    mrs = p.B_tilde @ grad
    return FactorDecomposition(y, ys, mr, mrs, y * mr, ys * mrs, total)


def solve_factor_rb(model: FactorModel, budgets, long_only: bool = True,
                    specific_cap: float | None = None, x0=None, seed: int = 0) -> dict:
    """Portfolio whose common-factor RC shares are closest to ``budgets``.

    The budgets cover the common factors only; whatever they leave is taken
    by the specific factors, whose contribution can be negative, so the
    budgets need not sum to one.

    When the long-only target is unreachable the achieved shares are returned
    next to the targets instead of failing.
    """
    b = np.asarray(budgets, dtype=float)
    if b.size != model.m:
        raise ValidationError("one budget per common factor is required")
    if np.any(b < 0):
        raise ValidationError("factor budgets must be non-negative")
    n = model.n
    p = pseudo_inverses(model)

    def shares(x):
        d = factor_risk_decomposition(x, model, pinv=p)
        return d.shares, d.shares_specific.sum()

    cov = model.cov
    ApS = p.A_plus @ cov

    def obj(x):
        # share_k = y_k g_k / v with y = A'x, g = A+ Sigma x, v = x' Sigma x
        sx = cov @ x
        v = float(x @ sx)
        if v <= 1e-300:
            return 1e6, np.zeros(n)
        y, g = model.A.T @ x, ApS @ x
        sh = y * g / v
        d = model.A * g + ApS.T * y - 2.0 * np.outer(sx, sh)
        r = sh - b
        return 1e4 * float(r @ r), 2e4 * (d / v) @ r

    cons = [{"type": "eq", "fun": lambda x: x.sum() - 1.0}]
    if specific_cap is not None:
        cons.append({"type": "ineq", "fun": lambda x: specific_cap - shares(x)[1]})
    bounds = [(0.0, 1.0)] * n if long_only else None
    rng = np.random.default_rng(seed)
    starts = [np.full(n, 1.0 / n) if x0 is None else np.asarray(x0, float)]
    starts += [rng.dirichlet(np.ones(n)) for _ in range(4)]
    best = None
    for s0 in starts:
        res = minimize(obj, s0, jac=True, method="SLSQP", bounds=bounds, constraints=cons,
                       options={"ftol": 1e-16, "maxiter": 2000})
        if best is None or res.fun < best.fun:
            best = res
        if best.fun < 1e-14:
            break
    x = best.x
    dec = factor_risk_decomposition(x, model, pinv=p)
    return {
        "x": x,
        "target": b,
        "achieved": dec.shares,
        "specific_share": float(dec.shares_specific.sum()),
        "exposures": dec.y,
        "feasible": bool(np.abs(dec.shares - b).max() <= 1e-6),
    }


# -- eigenfactors --------------------------------------------------------------

@dataclass
class PcaResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    explained: np.ndarray
    cumulative: np.ndarray


def pca_factors(cov) -> PcaResult:
    """Eigen-decomposition sorted by decreasing eigenvalue.

    Eigenvectors are unsigned; each is flipped so that its largest-magnitude
    entry is positive (first such entry on ties).
    """
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValidationError("matrix is not symmetric")
    lam, V = np.linalg.eigh(0.5 * (cov + cov.T))
    order = np.argsort(lam)[::-1]
    lam, V = lam[order], V[:, order]
    for j in range(V.shape[1]):
        k = int(np.argmax(np.abs(V[:, j]) - 1e-12 * np.arange(V.shape[0])))
        if V[k, j] < 0:
            V[:, j] = -V[:, j]
    total = lam.sum()
    expl = lam / total
    return PcaResult(lam, V, expl, np.cumsum(expl))


def first_eigen_share_lower_bound(rho_bar: float, n: int) -> float:
    """Lower bound rho_bar + (1 - rho_bar)/n of the first explained share."""
    return rho_bar + (1 - rho_bar) / n


# -- rates and credit -----------------------------------------------------------

def duration_exposures(durations, prices=1.0, cashflows=1.0, notionals=1.0) -> np.ndarray:
    """delta(T_i) = -D(T_i) B(T_i) C(T_i), scaled by notional."""
    D = np.asarray(durations, dtype=float)
    return -D * np.broadcast_to(np.asarray(prices, float), D.shape) \
        * np.broadcast_to(np.asarray(cashflows, float), D.shape) \
        * np.broadcast_to(np.asarray(notionals, float), D.shape)


@dataclass
class BondUniverse:
    countries: list
    notional: np.ndarray
    duration: np.ndarray
    spread: np.ndarray
    spread_vol: np.ndarray
    country_corr: dict = field(default_factory=dict)

    def __post_init__(self):
        self.countries = [str(c) for c in self.countries]
        for name in ("notional", "duration", "spread", "spread_vol"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.duration <= 0):
            raise ValidationError("durations must be positive")
        if np.any(self.spread < 0) or np.any(self.spread_vol < 0):
            raise ValidationError("spreads and spread volatilities must be nonnegative")

    @property
    def unique_countries(self) -> list:
        return list(dict.fromkeys(self.countries))

    @property
    def credit_vol(self) -> np.ndarray:
        return self.duration * self.spread_vol * self.spread

    def correlation(self) -> np.ndarray:
        n = len(self.countries)
        rho = np.eye(n)
        for i in range(n):
            for j in range(n):
                ci, cj = self.countries[i], self.countries[j]
                if ci == cj:
                    rho[i, j] = 1.0
                else:
                    v = self.country_corr.get((ci, cj), self.country_corr.get((cj, ci)))
                    if v is None:
                        raise ValidationError(f"missing correlation between {ci} and {cj}")
                    rho[i, j] = v
        return rho

    @property
    def cov(self) -> np.ndarray:
        s = self.credit_vol
        return self.correlation() * np.outer(s, s)

    @classmethod
    def from_csv(cls, path, country_corr: dict) -> "BondUniverse":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([r["country"] for r in rows], [float(r["notional"]) for r in rows],
                   [float(r["duration"]) for r in rows], [float(r["spread"]) for r in rows],
                   [float(r["spread_vol"]) for r in rows], country_corr)

    def meta_bonds(self, exposures=None) -> tuple["BondUniverse", np.ndarray]:
        """One bond per country: summed notional, exposure-weighted duration."""
        x = self.notional if exposures is None else np.asarray(exposures, float)
        names = self.unique_countries
        xs, ds, ss, vs = [], [], [], []
        for c in names:
            idx = [i for i, k in enumerate(self.countries) if k == c]
            tot = x[idx].sum()
            if not (np.allclose(self.spread[idx], self.spread[idx[0]])
                    and np.allclose(self.spread_vol[idx], self.spread_vol[idx[0]])):
                raise ValidationError(f"bonds of {c} must share spread and spread volatility")
            xs.append(tot)
            ds.append(float(x[idx] @ self.duration[idx]) / tot)
            ss.append(self.spread[idx[0]])
            vs.append(self.spread_vol[idx[0]])
        meta = BondUniverse(names, xs, ds, ss, vs, self.country_corr)
        return meta, np.array(xs)


def credit_risk(bonds: BondUniverse, exposures=None) -> tuple[RiskDecomposition, dict]:
    """Credit risk sqrt(x' Sigma x) with per-bond and per-country contributions."""
    x = bonds.notional if exposures is None else np.asarray(exposures, dtype=float)
    dec = risk_decomposition_volatility(x, bonds.cov)
    by_country = {c: 0.0 for c in bonds.unique_countries}
    for c, rc in zip(bonds.countries, dec.contributions):
        by_country[c] += float(rc)
    return dec, by_country


# -- merging perfectly correlated assets ---------------------------------------

def merge_perfectly_correlated(universe: AssetUniverse, x, i: int, j: int,
                               convention: str = "sum-weights", sigma_prime: float | None = None):
    """Replace assets i and j (rho_ij = 1, same correlations elsewhere) by one asset.

    The merged asset keeps y sigma' = x_i sigma_i + x_j sigma_j.  Conventions:
    ``sum-weights`` sets y = x_i + x_j, ``sum-vols`` sets sigma' = sigma_i + sigma_j;
    an explicit ``sigma_prime`` overrides both.
    """
    x = np.asarray(x, dtype=float)
    rho = universe.rho
    if abs(rho[i, j] - 1) > 1e-12:
        raise ValidationError("assets to merge must be perfectly correlated")
    others = [k for k in range(universe.n) if k not in (i, j)]
    if not np.allclose(rho[i, others], rho[j, others], atol=1e-12):
        raise ValidationError("assets to merge must share their correlations with the others")
    si, sj = universe.sigma[i], universe.sigma[j]
    total = x[i] * si + x[j] * sj
    if sigma_prime is not None:
        sp = float(sigma_prime)
        y_m = total / sp
    elif convention == "sum-weights":
        y_m = x[i] + x[j]
        if y_m == 0:
            sp = 0.5 * (si + sj)
        else:
            sp = total / y_m
    elif convention == "sum-vols":
        sp = si + sj
        y_m = total / sp
    else:
        raise ValidationError(f"unknown merge convention {convention!r}")
    keep = others
    pos = min(i, j)
    order = sorted(keep + [pos])
    sig = np.array([sp if k == pos else universe.sigma[k] for k in order])
    # the merged position earns (x_i R_i + x_j R_j) / y
    mu_m = universe.mu[i] if y_m == 0 else (x[i] * universe.mu[i] + x[j] * universe.mu[j]) / y_m
    mu = np.array([mu_m if k == pos else universe.mu[k] for k in order])
    rho_new = rho[np.ix_(order, order)].copy()
    y = np.array([y_m if k == pos else x[k] for k in order])
    names = [universe.names[k] if k != pos else f"{universe.names[i]}+{universe.names[j]}" for k in order]
    return AssetUniverse(mu, sig, rho_new, names), y


# -- Frazzini-Pedersen ----------------------------------------------------------

@dataclass
class Investor:
    phi: float
    margin: float = 1.0
    wealth: float = 1.0

    def __post_init__(self):
        if self.phi <= 0:
            raise ValidationError("risk aversion must be positive")
        if not 0 < self.margin <= 1:
            raise ValidationError("margin requirement must lie in (0, 1]")
        if self.wealth <= 0:
            raise ValidationError("wealth must be positive")


@dataclass
class FpEquilibrium:
    portfolios: list
    multipliers: np.ndarray
    x_bar: np.ndarray
    w_bar: np.ndarray
    phi: float
    psi: float
    betas: np.ndarray
    alphas: np.ndarray
    market_return: float


def frazzini_pedersen_equilibrium(universe: AssetUniverse, r: float, investors) -> FpEquilibrium:
    """One-period leverage-constrained equilibrium in return space.

    Holdings are dollar amounts (unit prices).  Investor j maximizes
    x'(mu - r) - phi_j/2 x'Sigma x subject to m_j 1'x <= W_j.
    """
    investors = list(investors)
    if not investors:
        raise ValidationError("at least one investor is required")
    n = universe.n
    P = np.ones(n)
    cov, excess = universe.cov, universe.mu - r
    xs, lams = [], []
    for inv in investors:
        # scaled program: min 1/2 x'Sigma x - x'(mu - r)/phi_j, -m_j P'x >= -W_j
        sol = solve_qp(QpProblem(Q=cov, R=excess / inv.phi, C=-(inv.margin * P)[None, :],
                                 D=np.array([-inv.wealth])))
        if not sol.optimal:
            raise ValidationError(f"investor problem failed ({sol.status})")
        xs.append(sol.x)
        lams.append(inv.phi * float(sol.lam[0]))
    lams = np.array(lams)
    phis = np.array([inv.phi for inv in investors])
    margins = np.array([inv.margin for inv in investors])
    phi = 1.0 / float((1.0 / phis).sum())
    psi = float((phi / phis * lams * margins).sum())
    x_bar = np.sum(xs, axis=0)
    value = float(x_bar @ P)
    w_bar = x_bar / value
    var_m = float(w_bar @ cov @ w_bar)
    betas = cov @ w_bar / var_m
    mu_m = float(universe.mu @ w_bar)
    alphas = excess - betas * (mu_m - r)
    return FpEquilibrium(xs, lams, x_bar, w_bar, phi, psi, betas, alphas, mu_m)
