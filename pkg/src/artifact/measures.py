"""Risk measures and loss-distribution tools.

Losses are positive numbers (L = -R).  Covers Gaussian, Pareto, discrete and
empirical VaR/ES, Cornish-Fisher quantiles, moment tensors of portfolio
P&L, moments of Gaussian quadratic forms and delta/delta-gamma option VaR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ValidationError

# -- standard normal -------------------------------------------------------

# Acklam's rational approximation (relative error ~1e-9), polished below by
# one Halley step against erfc, which brings it to machine precision.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def norm_cdf(x):
    x = np.asarray(x, dtype=float)
    out = 0.5 * np.vectorize(math.erfc)(-x / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def _ppf_scalar(p: float) -> float:
    if not 0.0 < p < 1.0:
        if p == 0.0:
            return -math.inf
        if p == 1.0:
            return math.inf
        raise ValueError(f"probability {p} outside [0, 1]")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # Halley refinement; the upper tail works with 1 - p, which is exact there
    if p > 0.5:
        e = (1.0 - p) - 0.5 * math.erfc(x / math.sqrt(2.0))
    else:
        e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def norm_ppf(p):
    """Inverse of the standard normal CDF."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 0:
        return _ppf_scalar(float(arr))
    return np.vectorize(_ppf_scalar, otypes=[float])(arr)


def _check_alpha(alpha: float, low: float = 0.5) -> None:
    if not low <= alpha < 1.0:
        raise ValidationError(f"confidence level {alpha} outside [{low}, 1)")


def es_factor(alpha: float) -> float:
    """phi(Phi^-1(alpha)) / (1 - alpha), the Gaussian ES multiplier."""
    return float(norm_pdf(norm_ppf(alpha))) / (1.0 - alpha)


# -- loss distributions ----------------------------------------------------

@dataclass(frozen=True)
class GaussianLoss:
    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValidationError("loss standard deviation must be nonnegative")


@dataclass(frozen=True)
class ParetoLoss:
    scale: float
    theta: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValidationError("Pareto scale must be positive")
        if self.theta <= 1:
            raise ValidationError("Pareto tail index must exceed 1 for ES to exist")


@dataclass(frozen=True, eq=False)
class DiscreteLoss:
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if s.shape != p.shape or s.ndim != 1:
            raise ValidationError("support and probabilities must be vectors of equal length")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError("probabilities must be nonnegative and sum to 1")
        if np.any(np.diff(s) <= 0):
            raise ValidationError("support must be strictly increasing")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_samples(cls, values, probs=None) -> "DiscreteLoss":
        """Aggregate (possibly repeated, unsorted) outcomes into a distribution."""
        values = np.asarray(values, dtype=float)
        probs = np.full(values.size, 1.0 / values.size) if probs is None else np.asarray(probs, float)
        support, inv = np.unique(values, return_inverse=True)
        agg = np.zeros(support.size)
        np.add.at(agg, inv, probs)
        return cls(support, agg)


def var_gaussian(loss: GaussianLoss, alpha: float) -> float:
    _check_alpha(alpha)
    return loss.mean + norm_ppf(alpha) * loss.std


def es_gaussian(loss: GaussianLoss, alpha: float) -> float:
    _check_alpha(alpha)
    return loss.mean + loss.std * es_factor(alpha)


def var_es_pareto(loss: ParetoLoss, alpha: float) -> tuple[float, float]:
    if not 0.0 <= alpha < 1.0:
        raise ValidationError(f"confidence level {alpha} outside [0, 1)")
    var = loss.scale * (1.0 - alpha) ** (-1.0 / loss.theta)
    return var, loss.theta / (loss.theta - 1.0) * var


def var_es_discrete(loss: DiscreteLoss, alpha: float) -> tuple[float, float]:
    """VaR = inf{l : P(L <= l) >= alpha}, ES = E[L | L >= VaR]."""
    cdf = np.cumsum(loss.probs)
    k = int(np.searchsorted(cdf, alpha - 1e-12, side="left"))
    k = min(k, loss.support.size - 1)
    var = float(loss.support[k])
    tail = loss.support >= var
    es = float(loss.support[tail] @ loss.probs[tail] / loss.probs[tail].sum())
    return var, es


def var_es_empirical(samples, alpha: float) -> tuple[float, float]:
    """VaR is the ceil(alpha*T)-th smallest loss; ES averages losses >= VaR."""
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    T = s.size
    if T == 0 or T * (1.0 - alpha) < 1.0 - 1e-9:
        raise ValidationError(f"need at least 1/(1-alpha) = {1 / (1 - alpha):.0f} samples, got {T}")
    k = max(int(math.ceil(alpha * T - 1e-9)), 1)
    var = float(s[k - 1])
    es = float(s[s >= var].mean())
    return var, es


def quantile_sum_witness():
    """Two marginals and a joint law for which VaR(80%) is not subadditive.

    Returns (L1, L2, L1 + L2) as DiscreteLoss objects.  Both marginals are
    uniform on {0,...,8} except for a 20% atom at 0; the coupling is the
    identity on {0..5} and the reflection on {6,7,8}.
    """
    l1 = np.array([0, 1, 2, 3, 4, 5, 6, 7, 8], dtype=float)
    p = np.array([0.2] + [0.1] * 8)
    l2 = np.array([0, 1, 2, 3, 4, 5, 8, 7, 6], dtype=float)
    return (DiscreteLoss(l1, p), DiscreteLoss.from_samples(l2, p),
            DiscreteLoss.from_samples(l1 + l2, p))


# -- Cornish-Fisher and moments ----------------------------------------------

def cornish_fisher_quantile(z: float, skew: float, kurt: float, order: int = 4) -> float:
    """Cornish-Fisher adjusted quantile; ``kurt`` is the excess kurtosis."""
    if order not in (3, 4):
        raise ValidationError("order must be 3 or 4")
    out = z + (z * z - 1.0) * skew / 6.0 + (z ** 3 - 3.0 * z) * kurt / 24.0
    if order == 4:
        out -= (2.0 * z ** 3 - 5.0 * z) * skew * skew / 36.0
    return out


@dataclass(frozen=True, eq=False)
class MomentTensors:
    """Centered comoment matrices M1 (n), M2 (n x n), M3 (n x n^2), M4 (n x n^3)."""

    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    m4: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.m1).size
        shapes = {"m2": (n, n), "m3": (n, n * n), "m4": (n, n ** 3)}
        for name, shape in shapes.items():
            if np.asarray(getattr(self, name)).shape != shape:
                raise ValidationError(f"{name} must have shape {shape}")

    @property
    def n(self) -> int:
        return np.asarray(self.m1).size

    @classmethod
    def from_returns(cls, returns) -> "MomentTensors":
        """Sample comoments with denominator T."""
        X = np.asarray(returns, dtype=float)
        T, n = X.shape
        m1 = X.mean(axis=0)
        Y = X - m1
        m2 = Y.T @ Y / T
        # column index j*n + k  <->  (j, k), matching kron ordering
        m3 = np.einsum("ti,tj,tk->ijk", Y, Y, Y).reshape(n, n * n) / T
        m4 = np.einsum("ti,tj,tk,tl->ijkl", Y, Y, Y, Y).reshape(n, n ** 3) / T
        return cls(m1, m2, m3, m4)


def portfolio_tensor_moments(x, tensors: MomentTensors) -> dict:
    """P&L moments mu_r = x M_r (x kron ... kron x) plus loss statistics."""
    x = np.asarray(x, dtype=float)
    if x.size != tensors.n:
        raise ValidationError("portfolio and tensors differ in dimension")
    xx = np.kron(x, x)
    mu1 = float(x @ tensors.m1)
    mu2 = float(x @ tensors.m2 @ x)
    mu3 = float(x @ tensors.m3 @ xx)
    mu4 = float(x @ tensors.m4 @ np.kron(xx, x))
    out = {"mu1": mu1, "mu2": mu2, "mu3": mu3, "mu4": mu4,
           "loss_mean": -mu1, "loss_std": math.sqrt(max(mu2, 0.0))}
    if mu2 > 0:
        out["loss_skew"] = -mu3 / mu2 ** 1.5
        out["loss_kurt"] = mu4 / mu2 ** 2 - 3.0
    else:
        out["loss_skew"] = out["loss_kurt"] = float("nan")
    return out


def cornish_fisher_var(x, tensors: MomentTensors, alpha: float, order: int = 4) -> float:
    m = portfolio_tensor_moments(x, tensors)
    z = cornish_fisher_quantile(norm_ppf(alpha), m["loss_skew"], m["loss_kurt"], order)
    return m["loss_mean"] + z * m["loss_std"]


def cornish_fisher_var_gradient(x, tensors: MomentTensors, alpha: float, order: int = 4) -> tuple[float, np.ndarray]:
    """Cornish-Fisher VaR and its gradient in x.

    VaR is homogeneous of degree one (skewness and kurtosis are scale free),
    so x' grad = VaR and the gradient yields an Euler allocation.
    """
    x = np.asarray(x, dtype=float)
    n = tensors.n
    if x.size != n:
        raise ValidationError("portfolio and tensors differ in dimension")
    m1 = np.asarray(tensors.m1, float)
    m2 = np.asarray(tensors.m2, float)
    t3 = np.asarray(tensors.m3, float).reshape(n, n, n)
    t4 = np.asarray(tensors.m4, float).reshape(n, n, n, n)
    mu1 = float(m1 @ x)
    mu2 = float(x @ m2 @ x)
    if mu2 <= 0:
        raise ValidationError("portfolio has zero variance")
    mu3 = float(np.einsum("ijk,i,j,k->", t3, x, x, x))
    mu4 = float(np.einsum("ijkl,i,j,k,l->", t4, x, x, x, x))
    g2 = (m2 + m2.T) @ x
    # no symmetry assumed on the comoment tensors
    g3 = (np.einsum("ajk,j,k->a", t3, x, x) + np.einsum("iak,i,k->a", t3, x, x)
          + np.einsum("ija,i,j->a", t3, x, x))
    g4 = (np.einsum("ajkl,j,k,l->a", t4, x, x, x) + np.einsum("iakl,i,k,l->a", t4, x, x, x)
          + np.einsum("ijal,i,j,l->a", t4, x, x, x) + np.einsum("ijka,i,j,k->a", t4, x, x, x))
    sig = math.sqrt(mu2)
    skew = -mu3 / mu2 ** 1.5
    kurt = mu4 / mu2 ** 2 - 3.0
    z = norm_ppf(alpha)
    zcf = cornish_fisher_quantile(z, skew, kurt, order)
    d_sig = g2 / (2.0 * sig)
    d_skew = -g3 / mu2 ** 1.5 + 1.5 * mu3 * g2 / mu2 ** 2.5
    d_kurt = g4 / mu2 ** 2 - 2.0 * mu4 * g2 / mu2 ** 3
    dz_skew = (z * z - 1.0) / 6.0
    if order == 4:
        dz_skew -= 2.0 * (2.0 * z ** 3 - 5.0 * z) * skew / 36.0
    dz_kurt = (z ** 3 - 3.0 * z) / 24.0
    var = -mu1 + zcf * sig
    grad = -m1 + zcf * d_sig + sig * (dz_skew * d_skew + dz_kurt * d_kurt)
    return var, grad


def quadratic_form_moments(A, cov) -> tuple[float, float, float, float]:
    """(mean, variance, skewness, excess kurtosis) of X'AX with X ~ N(0, cov)."""
    A = np.asarray(A, dtype=float)
    S = np.asarray(cov, dtype=float)
    if not np.allclose(A, A.T, atol=1e-12):
        raise ValidationError("A must be symmetric")
    P = A @ S
    P2 = P @ P
    t1, t2 = np.trace(P), np.trace(P2)
    t3, t4 = np.trace(P2 @ P), np.trace(P2 @ P2)
    if t2 <= 0:
        raise ValidationError("tr((A Sigma)^2) is zero, skewness and kurtosis undefined")
    return (float(t1), float(2.0 * t2), float(2.0 * math.sqrt(2.0) * t3 / t2 ** 1.5),
            float(12.0 * t4 / t2 ** 2))


# -- option books ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OptionBook:
    """Positions x_i on options written on underlyings with prices S_i.

    ``gamma`` is the matrix of second derivatives with respect to the
    underlying prices; ``cov`` is the covariance of underlying returns over
    the VaR horizon.
    """

    positions: np.ndarray
    prices: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.positions).size
        g = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        if g.shape != (n, n) or np.asarray(self.cov).shape != (n, n):
            raise ValidationError("gamma and covariance must be n x n")
        if not np.allclose(g, g.T):
            raise ValidationError("gamma matrix must be symmetric")
        for name in ("positions", "prices", "delta"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))

    @property
    def dollar_delta(self) -> np.ndarray:
        return self.positions * self.delta * self.prices

    @property
    def dollar_gamma(self) -> np.ndarray:
        xs = self.positions * self.prices
        return np.outer(xs, xs) * self.gamma


def option_loss_moments(book: OptionBook) -> dict:
    """Mean, std, skewness and excess kurtosis of the delta-gamma loss."""
    d, G, S = book.dollar_delta, book.dollar_gamma, book.cov
    GS = G @ S
    dSd = float(d @ S @ d)
    t1 = float(np.trace(GS))
    t2 = float(np.trace(GS @ GS))
    t3 = float(np.trace(GS @ GS @ GS))
    t4 = float(np.trace(GS @ GS @ GS @ GS))
    dSGSd = float(d @ S @ G @ S @ d)
    dSGSGSd = float(d @ S @ G @ S @ G @ S @ d)
    var = dSd + 0.5 * t2
    # cumulants of the P&L  d'X + 1/2 X'GX
    k3 = 3.0 * dSGSd + t3
    k4 = 12.0 * dSGSGSd + 3.0 * t4
    out = {"mean": -0.5 * t1, "std": math.sqrt(max(var, 0.0))}
    if var > 0:
        out["skew"] = -k3 / var ** 1.5
        out["kurt"] = k4 / var ** 2
    else:
        out["skew"] = out["kurt"] = 0.0
    return out


def delta_gamma_var(book: OptionBook, alpha: float, method: str = "delta-gamma",
                    order: int = 4) -> float:
    """Option-book VaR by the delta, delta-gamma or Cornish-Fisher method."""
    _check_alpha(alpha)
    z = norm_ppf(alpha)
    d, S = book.dollar_delta, book.cov
    if method == "delta":
        return z * math.sqrt(max(float(d @ S @ d), 0.0))
    m = option_loss_moments(book)
    if method == "delta-gamma":
        return m["mean"] + z * m["std"]
    if method == "cornish-fisher":
        return m["mean"] + cornish_fisher_quantile(z, m["skew"], m["kurt"], order) * m["std"]
    raise ValidationError(f"unknown method {method!r}")


# -- Monte-Carlo ES contributions ------------------------------------------

def mc_es_contributions(x, returns, alpha: float) -> tuple[np.ndarray, float]:
    """Historical/MC estimator of ES risk contributions.

    RC_i = -x_i / ((1-alpha) T) * sum_t R_{i,t} 1{R_t(x) <= R_{(1-alpha)T:T}(x)}.
    Returns (contributions, ES).
    """
    x = np.asarray(x, dtype=float)
    R = np.asarray(returns, dtype=float)
    T = R.shape[0]
    port = R @ x
    k = max(int(math.floor((1.0 - alpha) * T + 1e-9)), 1)
    thresh = np.partition(port, k - 1)[k - 1]
    mask = port <= thresh
    rc = -x * R[mask].sum(axis=0) / ((1.0 - alpha) * T)
    return rc, float(rc.sum())


def simulate_gaussian(mu, cov, T: int, seed: int, chunk: int = 250_000) -> np.ndarray:
    """Draw T Gaussian return vectors in fixed-size chunks for reproducibility."""
    mu = np.asarray(mu, dtype=float)
    L = np.linalg.cholesky(np.asarray(cov, dtype=float) + 1e-16 * np.eye(mu.size))
    ss = np.random.SeedSequence(seed)
    out = np.empty((T, mu.size))
    n_chunks = -(-T // chunk)
    for c, child in enumerate(ss.spawn(n_chunks)):
        lo, hi = c * chunk, min((c + 1) * chunk, T)
        z = np.random.default_rng(child).standard_normal((hi - lo, mu.size))
        out[lo:hi] = mu + z @ L.T
    return out
