"""Portfolio algebra that needs no optimizer.

Euler decompositions, betas, implied premia, benchmark statistics,
concentration indices, turnover and a few closed forms for the equally
weighted portfolio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RiskDecomposition, ValidationError
from .measures import MomentTensors, cornish_fisher_var_gradient, es_factor, norm_ppf


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _vol(x, cov) -> float:
    return math.sqrt(max(float(x @ cov @ x), 0.0))


# -- Euler decompositions --------------------------------------------------

def risk_decomposition_volatility(x, cov) -> RiskDecomposition:
    x, cov = _vec(x), _vec(cov)
    s = _vol(x, cov)
    if s <= 0:
        raise ValidationError("portfolio has zero volatility")
    mr = cov @ x / s
    return RiskDecomposition(x, mr, x * mr, s)


def risk_decomposition_var(x, cov, mu, alpha: float) -> RiskDecomposition:
    """Gaussian VaR: MR_i = -mu_i + Phi^-1(alpha) (Sigma x)_i / sigma(x)."""
    x, cov, mu = _vec(x), _vec(cov), _vec(mu)
    s = _vol(x, cov)
    if s <= 0:
        raise ValidationError("portfolio has zero volatility")
    mr = -mu + norm_ppf(alpha) * (cov @ x) / s
    return RiskDecomposition(x, mr, x * mr, float(-mu @ x + norm_ppf(alpha) * s))


def risk_decomposition_es(x, cov, mu, alpha: float) -> RiskDecomposition:
    """Gaussian ES: MR_i = -mu_i + phi(Phi^-1(alpha))/(1-alpha) (Sigma x)_i / sigma(x)."""
    if not 0.5 <= alpha < 1.0:
        raise ValidationError(f"confidence level {alpha} outside [0.5, 1)")
    x, cov, mu = _vec(x), _vec(cov), _vec(mu)
    s = _vol(x, cov)
    if s <= 0:
        raise ValidationError("portfolio has zero volatility")
    k = es_factor(alpha)
    mr = -mu + k * (cov @ x) / s
    return RiskDecomposition(x, mr, x * mr, float(-mu @ x + k * s))


def risk_decomposition_cornish_fisher(x, tensors: MomentTensors, alpha: float,
                                      order: int = 4) -> RiskDecomposition:
    """Cornish-Fisher VaR with skewness and kurtosis read from comoment tensors."""
    if not 0.5 <= alpha < 1.0:
        raise ValidationError(f"confidence level {alpha} outside [0.5, 1)")
    x = _vec(x)
    var, mr = cornish_fisher_var_gradient(x, tensors, alpha, order)
    return RiskDecomposition(x, mr, x * mr, var)


# -- betas and premia --------------------------------------------------------

def beta(x, b, cov) -> tuple[np.ndarray, float]:
    """Asset betas with respect to ``b`` and the portfolio beta of ``x``."""
    x, b, cov = _vec(x), _vec(b), _vec(cov)
    vb = float(b @ cov @ b)
    if vb <= 0:
        raise ValidationError("benchmark has zero variance")
    betas = cov @ b / vb
    return betas, float(x @ betas)


def implied_risk_premia(x0, cov, sr: float | None = None, mu=None, r: float = 0.0):
    """(phi, pi) with phi = SR/sigma(x0) and pi = phi Sigma x0.

    An explicit ``sr`` takes precedence over the one implied by (mu, r).
    """
    x0, cov = _vec(x0), _vec(cov)
    s = _vol(x0, cov)
    if s <= 0:
        raise ValidationError("portfolio has zero volatility")
    if sr is None:
        if mu is None:
            raise ValidationError("either sr or mu must be supplied")
        sr = (float(_vec(mu) @ x0) - r) / s
    phi = sr / s
    return phi, phi * (cov @ x0)


def capm_deviation(x_star, x, cov, mu, r: float) -> np.ndarray:
    """delta_i = MR_i(x*) SR(x*) - MR_i(x) SR(x)."""
    x_star, x, cov, mu = _vec(x_star), _vec(x), _vec(cov), _vec(mu)
    out = []
    for p in (x_star, x):
        s = _vol(p, cov)
        if s <= 0:
            raise ValidationError("portfolio has zero volatility")
        out.append(cov @ p / s * (float(mu @ p) - r) / s)
    return out[0] - out[1]


def beta_premium(x, cov, mu, r: float) -> np.ndarray:
    """pi(e_i | x) = beta_i(x) (mu(x) - r)."""
    betas, _ = beta(x, x, cov)
    return betas * (float(_vec(mu) @ _vec(x)) - r)


# -- benchmark statistics ------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkStats:
    excess_return: float
    tracking_error: float
    information_ratio: float
    beta: float
    correlation: float


def tracking_stats(x, b, cov, mu) -> BenchmarkStats:
    x, b, cov, mu = _vec(x), _vec(b), _vec(cov), _vec(mu)
    d = x - b
    te = _vol(d, cov)
    ex = float(mu @ d)
    sx, sb = _vol(x, cov), _vol(b, cov)
    if sx * sb <= 0:
        raise ValidationError("correlation undefined for a zero-risk portfolio")
    rho = (sx ** 2 + sb ** 2 - te ** 2) / (2 * sx * sb)
    ir = ex / te if te > 0 else (0.0 if ex == 0 else math.copysign(math.inf, ex))
    return BenchmarkStats(ex, te, ir, float(x @ cov @ b) / sb ** 2, float(np.clip(rho, -1, 1)))


def tracker_mix_alpha(x0, x, y, b, cov) -> float:
    """Smallest alpha in [0,1] with sigma((1-alpha) x0 + alpha x | b) = sigma(y | b)."""
    x0, x, y, b, cov = map(_vec, (x0, x, y, b, cov))

    def te2(p, q):
        d = p - q
        return float(d @ cov @ d)

    a = te2(x, x0)
    bb = te2(x, b) - te2(x, x0) - te2(x0, b)
    c = te2(x0, b) - te2(y, b)
    if a <= 1e-300:
        if abs(bb) <= 1e-300:
            raise ValidationError("tracker and portfolio coincide; alpha undefined")
        roots = [-c / bb]
    else:
        disc = bb * bb - 4 * a * c
        if disc < 0:
            raise ValidationError("no real root for the tracker mix")
        sq = math.sqrt(disc)
        roots = sorted([(-bb - sq) / (2 * a), (-bb + sq) / (2 * a)])
    inside = [t for t in roots if -1e-12 <= t <= 1 + 1e-12]
    if not inside:
        raise ValidationError(f"no root in [0, 1] (roots {roots})")
    alpha = min(max(inside[0], 0.0), 1.0)
    z = (1 - alpha) * x0 + alpha * x
    if abs(math.sqrt(te2(z, b)) - math.sqrt(te2(y, b))) > 1e-8:
        raise ValidationError("tracker mix failed the plug-back check")
    return alpha


# -- Sharpe aggregation ------------------------------------------------------

def sharpe_aggregation(mu, sigma, r: float, rho: float | None = None):
    """Sharpe ratio of the EW portfolio written as a weighted sum of SR_i.

    With zero correlation: SR = sum w_i SR_i, w_i = sigma_i / sqrt(sum sigma_j^2).
    When ``rho`` is given (equal vols, constant correlation) the aggregate is
    w * mean(SR_i) with w = 1/sqrt(rho + (1-rho)/n).
    Returns (SR vector, weights, aggregate SR).
    """
    mu, sigma = _vec(mu), _vec(sigma)
    if np.any(sigma <= 0):
        raise ValidationError("volatilities must be positive")
    sr = (mu - r) / sigma
    n = sigma.size
    if rho is None:
        w = sigma / math.sqrt(float(sigma @ sigma))
        return sr, w, float(w @ sr)
    w = 1.0 / math.sqrt(rho + (1 - rho) / n)
    return sr, np.full(n, w / n), float(w * sr.mean())


def sharpe_multiplier(n: int, rho: float) -> float:
    """Gain w = 1/sqrt(rho + (1-rho)/n) from combining n equal-Sharpe assets."""
    return 1.0 / math.sqrt(rho + (1 - rho) / n)


def assets_needed_for_multiplier(rho: float, w: float) -> float:
    """n* = w^2 (1-rho) / (1 - rho w^2)."""
    if rho * w * w >= 1:
        raise ValidationError(f"multiplier {w} unattainable at correlation {rho} (bound {1 / math.sqrt(rho):.4f})")
    return w * w * (1 - rho) / (1 - rho * w * w)


# -- diversification and concentration ---------------------------------------

def diversification_ratio(x, sigma, cov) -> float:
    x = _vec(x)
    s = _vol(x, _vec(cov))
    if s <= 0:
        raise ValidationError("portfolio has zero volatility")
    return float(x @ _vec(sigma)) / s


def diversification_ratio_bound(sigma, cov) -> float:
    """sqrt(1' Sigma^-1 1) * max sigma_i, an upper bound of DR."""
    ones = np.ones(len(sigma))
    return math.sqrt(float(ones @ np.linalg.solve(_vec(cov), ones))) * float(np.max(sigma))


@dataclass(frozen=True)
class ConcentrationStats:
    gini: float
    herfindahl: float
    effective_n: float


def gini(w, trapezoidal: bool = True) -> float:
    """Gini index from the Lorenz curve of the weights (sorted descending).

    The trapezoidal convention gives 0 for equal weights; the constant-
    piecewise one (``trapezoidal=False``) gives 1/n there.
    """
    w = np.sort(_vec(w))[::-1]
    n = w.size
    cum = np.cumsum(w)[:-1].sum()
    if trapezoidal:
        return float(2.0 / n * (cum + 0.5) - 1.0)
    return float(2.0 / n * (cum + 1.0) - 1.0)


def concentration(x, trapezoidal: bool = True) -> ConcentrationStats:
    w = _vec(x)
    if np.any(w < -1e-12):
        raise ValidationError("concentration indices need nonnegative weights")
    if abs(w.sum() - 1) > 1e-8:
        raise ValidationError("weights must sum to one")
    h = float(w @ w)
    return ConcentrationStats(gini(w, trapezoidal), h, 1.0 / h)


def lorenz_gini_power(a: float) -> float:
    """Gini of the Lorenz curve L(x) = x^a."""
    if a < 0:
        raise ValidationError("exponent must be nonnegative")
    return (1.0 - a) / (1.0 + a)


def turnover(x, x0) -> float:
    return float(np.abs(_vec(x) - _vec(x0)).sum())


# -- equally weighted closed forms -------------------------------------------

def ew_closed_forms(sigma, rho) -> dict:
    """Volatility and RC shares of the EW portfolio.

    ``rho_bar`` is the average pairwise correlation and ``rho_bar_i`` the
    average correlation of asset i with the others.  For equal volatilities
    sigma(EW) = sigma sqrt((1 + (n-1) rho_bar)/n) and
    RC*_i = (1 + (n-1) rho_bar_i) / (n (1 + (n-1) rho_bar)).
    """
    sigma, rho = _vec(sigma), _vec(rho)
    n = sigma.size
    x = np.full(n, 1.0 / n)
    cov = rho * np.outer(sigma, sigma)
    dec = risk_decomposition_volatility(x, cov)
    off = rho.sum() - n
    rho_bar = off / (n * (n - 1)) if n > 1 else 0.0
    rho_bar_i = (rho.sum(axis=1) - 1) / (n - 1) if n > 1 else np.zeros(1)
    out = {"vol": dec.risk_total, "rc_shares": dec.shares, "rho_bar": rho_bar}
    if np.allclose(sigma, sigma[0]):
        s = sigma[0]
        out["vol_closed_form"] = s * math.sqrt((1 + (n - 1) * rho_bar) / n)
        out["rc_shares_closed_form"] = (1 + (n - 1) * rho_bar_i) / (n * (1 + (n - 1) * rho_bar))
    out["vol_limit_uncorrelated"] = math.sqrt(float(sigma @ sigma)) / n
    out["vol_limit_perfect"] = float(sigma.mean())
    out["rc_shares_limit_perfect"] = sigma / (n * sigma.mean())
    return out
