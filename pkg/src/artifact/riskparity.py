"""Risk budgeting solvers and closed-form risk-based portfolios.

A risk budgeting (RB) portfolio equalizes RC_i / b_i across assets with a
positive budget.  Solvers:

* Jacobi power iteration for ERC (x_i proportional to 1/beta_i),
* pairwise least squares over the simplex,
* log-barrier Newton methods (sigma(x) - lambda sum ln x_i and the
  variance form 1/2 x'Sigma x - sum b_i ln x_i),
* Gaussian ES and Cornish-Fisher VaR budgeting, sign-parametrized
  long-short budgeting,
* enumeration of the KKT patterns created by zero budgets.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .analytics import (
    risk_decomposition_cornish_fisher,
    risk_decomposition_es,
    risk_decomposition_var,
    risk_decomposition_volatility,
)
from .core import RiskDecomposition, ValidationError, check_psd
from .measures import MomentTensors, cornish_fisher_var_gradient, es_factor, norm_ppf

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-6
DEDUPE_TOL = 1e-5


class RbConvergenceError(RuntimeError):
    """Solver failed; ``last`` carries the last iterate."""

    def __init__(self, message: str, last=None):
        super().__init__(message)
        self.last = last


@dataclass
class RbProblem:
    cov: np.ndarray
    budgets: np.ndarray
    measure: str = "volatility"
    alpha: float = 0.99
    mu: np.ndarray | None = None
    signs: np.ndarray | None = None

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float)
        check_psd(self.cov, "covariance matrix")
        b = np.asarray(self.budgets, dtype=float)
        if b.size != self.cov.shape[0]:
            raise ValidationError("budgets and covariance differ in size")
        if np.any(b < 0) or not np.any(b > 0):
            raise ValidationError("budgets must be nonnegative with at least one positive entry")
        self.budgets = b / b.sum()
        if self.measure not in ("volatility", "es", "var"):
            raise ValidationError(f"unknown risk measure {self.measure!r}")
        if self.measure in ("es", "var") and not 0.5 <= self.alpha < 1:
            raise ValidationError("ES confidence level must lie in [0.5, 1)")
        if self.mu is not None:
            self.mu = np.asarray(self.mu, dtype=float)
        if self.signs is not None:
            s = np.asarray(self.signs, dtype=float)
            if not np.all(np.isin(s, (-1.0, 1.0))):
                raise ValidationError("signs must be +1 or -1")
            self.signs = s

    @classmethod
    def from_json(cls, path, cov, mu=None) -> "RbProblem":
        d = json.loads(Path(path).read_text())
        measure, alpha = "volatility", 0.99
        m = d.get("measure", "volatility")
        if isinstance(m, dict) and len(m) == 1 and next(iter(m)) in ("es", "var"):
            measure = next(iter(m))
            alpha = float(m[measure].get("alpha", 0.99))
        elif m != "volatility":
            raise ValidationError(f"unknown risk measure {m!r}")
        return cls(cov, d["budgets"], measure, alpha, mu, d.get("signs"))


@dataclass
class RbSolution:
    x: np.ndarray
    decomposition: RiskDecomposition
    iterations: int
    residual: float
    solver: str
    extra: dict = field(default_factory=dict)

    @property
    def volatility(self) -> float:
        return self.decomposition.risk_total


def _finish(x, cov, budgets, solver, iterations, mu=None, alpha=None, extra=None,
            measure: str = "es") -> RbSolution:
    if mu is None:
        dec = risk_decomposition_volatility(x, cov)
    elif measure == "var":
        dec = risk_decomposition_var(x, cov, mu, alpha)
    else:
        dec = risk_decomposition_es(x, cov, mu, alpha)
    residual = float(np.abs(dec.shares - budgets).max())
    return RbSolution(x, dec, iterations, residual, solver, extra or {})


# -- Jacobi -------------------------------------------------------------------

def solve_erc_jacobi(cov, tol: float = 1e-10, max_iter: int = 10_000,
                     fallback: bool = True) -> RbSolution:
    """ERC by the fixed point x_i = beta_i^-1 / sum beta_j^-1, starting from EW.

    Damping 1/2 is switched on when the updates start alternating in sign.
    """
    cov = np.asarray(cov, dtype=float)
    check_psd(cov, "covariance matrix")
    n = cov.shape[0]
    x = np.full(n, 1.0 / n)
    damp = False
    prev_step = None
    trace = [x.copy()]
    for k in range(1, max_iter + 1):
        sx = cov @ x
        var = float(x @ sx)
        if var <= 0 or np.any(sx <= 0):
            break
        beta = sx / var
        t = (1.0 / beta) / (1.0 / beta).sum()
        step = t - x
        if prev_step is not None and not damp and float(step @ prev_step) < -0.5 * float(step @ step):
            damp = True
        x_new = 0.5 * (x + t) if damp else t
        diff = np.abs(x_new - x).max()
        x = x_new
        trace.append(x.copy())
        prev_step = step
        if diff <= tol:
            sol = _finish(x, cov, np.full(n, 1.0 / n), "jacobi", k, extra={"trace": trace})
            return sol
    if fallback:
        logger.info("Jacobi iteration failed to converge; falling back to least squares")
        return solve_rb_least_squares(RbProblem(cov, np.full(n, 1.0 / n)))
    raise RbConvergenceError(f"Jacobi iteration did not converge in {max_iter} steps", x)


# -- least squares --------------------------------------------------------------

def solve_rb_least_squares(problem: RbProblem, gross: float = 1.0, x0=None) -> RbSolution:
    """Minimize sum_{i,j} (RC_i/b_i - RC_j/b_j)^2 over the simplex.

    Pairs are restricted to positive budgets; zero-budget assets are held at
    zero weight (the canonical solution).  The result is rescaled to ``gross``.
    """
    cov, b = problem.cov, problem.budgets
    pos = b > 0
    idx = np.flatnonzero(pos)
    if idx.size == 1:
        x = np.zeros(b.size)
        x[idx] = gross
        return _finish(x, cov, b, "least-squares", 0)
    S = cov[np.ix_(idx, idx)]
    S = S / np.mean(np.diag(S))
    bb = b[idx]
    m = idx.size

    def fun(y):
        sy = S @ y
        a = y * sy / bb
        f = 2 * m * float(a @ a) - 2 * float(a.sum()) ** 2
        # d a_k / d y = (diag(sy) + diag(y) S) / b_k
        g_a = 4 * m * a - 4 * a.sum()
        J = (np.diag(sy) + y[:, None] * S) / bb[:, None]
        return f, J.T @ g_a

    # positive budgets put the solution inside the simplex: optimize over
    # softmax coordinates to stay away from the vertices
    def fun_z(z):
        e = np.exp(z - z.max())
        y = e / e.sum()
        f, g = fun(y)
        return f, y * (g - float(y @ g))

    start = np.full(m, 1.0 / m) if x0 is None else np.asarray(x0, float)[idx]
    z = np.log(np.clip(start, 1e-12, None))
    best = None
    it = 0
    for _ in range(5):
        res = minimize(fun_z, z, jac=True, method="BFGS", options={"gtol": 1e-15, "maxiter": 2000})
        it += res.nit
        z = res.x
        y = np.exp(z - z.max())
        y = y / y.sum()
        x = np.zeros(b.size)
        x[idx] = y
        sol = _finish(x, cov, b, "least-squares", it)
        if best is None or sol.residual < best.residual:
            best = sol
        if sol.residual <= 1e-10:
            break
    if best.residual > RESIDUAL_TOL:
        raise RbConvergenceError(f"least-squares RB stalled (residual {best.residual:.2e})", best.x)
    best.x = best.x * gross
    return _finish(best.x, cov, b, "least-squares", it)


# -- Newton on log-barrier formulations ---------------------------------------

def _newton(fun_grad_hess, x, free=None, tol=1e-22, max_iter=200):
    """Damped Newton for a convex function on {x_i > 0 unless free[i]}."""
    n = x.size
    free = np.zeros(n, dtype=bool) if free is None else free
    f, g, H = fun_grad_hess(x)
    for k in range(1, max_iter + 1):
        try:
            d = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            d = -np.linalg.lstsq(H, g, rcond=None)[0]
        dec = float(-g @ d)
        if dec <= tol * max(1.0, abs(f)):
            return x, k
        t = 1.0
        neg = (~free) & (d < 0)
        if np.any(neg):
            t = min(1.0, 0.99 * float(np.min(-x[neg] / d[neg])))
        if t == 1.0 and dec <= 1e-10 * max(1.0, abs(f)):
            # quadratic regime: f differences drown in roundoff, so judge the
            # full step by the gradient instead
            xn = x + d
            fn, gn, Hn = fun_grad_hess(xn)
            if not np.isfinite(fn) or np.linalg.norm(gn) >= np.linalg.norm(g):
                return x, k
            x, f, g, H = xn, fn, gn, Hn
            continue
        while True:
            xn = x + t * d
            fn, gn, Hn = fun_grad_hess(xn)
            if np.isfinite(fn) and fn <= f - 0.25 * t * dec:
                break
            t *= 0.5
            if t < 1e-20:
                return x, k
        x, f, g, H = xn, fn, gn, Hn
    return x, max_iter


def _rb_variance_newton(cov, b, free=None, x0=None):
    """argmin 1/2 x'Sigma x - sum_{b_i > 0} b_i ln x_i."""
    n = b.size
    pos = b > 0

    def fgh(x):
        if np.any(x[pos] <= 0):
            return np.inf, None, None
        sx = cov @ x
        f = 0.5 * float(x @ sx) - float(b[pos] @ np.log(x[pos]))
        g = sx.copy()
        g[pos] -= b[pos] / x[pos]
        H = cov.copy()
        H[pos, pos] += b[pos] / x[pos] ** 2
        return f, g, H

    if x0 is None:
        x0 = np.where(pos, np.sqrt(b / np.maximum(np.diag(cov), 1e-300)), 0.0)
        x0 = np.where(pos, x0, 0.0)
        x0 = x0 / math.sqrt(max(float(x0 @ cov @ x0), 1e-300))
        x0 = np.where(pos, x0, 0.0)
    return _newton(fgh, x0.astype(float), free)


def solve_rb(problem: RbProblem) -> RbSolution:
    """General long-only RB (volatility or Gaussian ES) via the convex barrier problem."""
    if problem.signs is not None:
        return solve_rb_long_short(problem.cov, problem.budgets, problem.signs, problem)
    if problem.measure in ("es", "var"):
        return solve_rb_es(problem)
    cov, b = problem.cov, problem.budgets
    keep = b > 0
    sub = cov[np.ix_(keep, keep)]
    y, it = _rb_variance_newton(sub, b[keep])
    x = np.zeros(b.size)
    x[keep] = y / y.sum()
    return _finish(x, cov, b, "newton", it)


def solve_erc_log_barrier(cov, lambda_c: float = 1.0, budgets=None):
    """argmin sigma(x) - lambda_c sum b_i ln x_i, returned non-normalized.

    Returns ``(x, c)`` with c = sum ln x_i.  At the optimum x_i dsigma/dx_i =
    lambda_c b_i, so x is a (scaled) risk budgeting portfolio.
    """
    if lambda_c <= 0:
        raise ValidationError("lambda_c must be positive; zero gives the degenerate null portfolio")
    cov = np.asarray(cov, dtype=float)
    check_psd(cov, "covariance matrix")
    n = cov.shape[0]
    b = np.full(n, 1.0 / n) if budgets is None else np.asarray(budgets, float) / np.sum(budgets)
    if np.any(b <= 0):
        raise ValidationError("log-barrier budgets must be strictly positive")
    w = lambda_c * b * n if budgets is None else lambda_c * b

    def fgh(x):
        if np.any(x <= 0):
            return np.inf, None, None
        sx = cov @ x
        s = math.sqrt(max(float(x @ sx), 1e-300))
        f = s - float(w @ np.log(x))
        g = sx / s - w / x
        H = cov / s - np.outer(sx, sx) / s ** 3 + np.diag(w / x ** 2)
        return f, g, H

    # a good start: the variance-form solution scaled to sigma = sum(w)
    y, _ = _rb_variance_newton(cov, b)
    y = y * float(w.sum()) / math.sqrt(float(y @ cov @ y))
    x, _ = _newton(fgh, y)
    return x, float(np.log(x).sum())


def scale_by_log_budget(x_normalized, c: float) -> np.ndarray:
    """Rescale a normalized portfolio so that sum ln x_i = c."""
    x = np.asarray(x_normalized, dtype=float)
    return x * math.exp((c - float(np.log(x).sum())) / x.size)


def solve_rb_es(problem: RbProblem) -> RbSolution:
    """RB for Gaussian ES or VaR: argmin R(x) - sum b_i ln x_i, then normalize.

    Both measures read -mu'x + k sigma(x); only the factor k differs.
    """
    cov, b = problem.cov, problem.budgets
    n = b.size
    mu = np.zeros(n) if problem.mu is None else problem.mu
    k = norm_ppf(problem.alpha) if problem.measure == "var" else es_factor(problem.alpha)
    keep = b > 0
    sub, m, bb = cov[np.ix_(keep, keep)], mu[keep], b[keep]

    def fgh(x):
        if np.any(x <= 0):
            return np.inf, None, None
        sx = sub @ x
        s = math.sqrt(max(float(x @ sx), 1e-300))
        es = -float(m @ x) + k * s
        if es <= 0:
            return np.inf, None, None
        f = es - float(bb @ np.log(x))
        g = -m + k * sx / s - bb / x
        H = k * (sub / s - np.outer(sx, sx) / s ** 3) + np.diag(bb / x ** 2)
        return f, g, H

    y0, _ = _rb_variance_newton(sub, bb)
    y0 = y0 / math.sqrt(float(y0 @ sub @ y0)) / k
    y, it = _newton(fgh, y0)
    x = np.zeros(n)
    x[keep] = y / y.sum()
    sol = _finish(x, cov, b, f"newton-{problem.measure}", it, mu=mu, alpha=problem.alpha, measure=problem.measure)
    if sol.residual > RESIDUAL_TOL:
        raise RbConvergenceError(f"{problem.measure.upper()} risk budgeting failed (residual {sol.residual:.2e})", x)
    return sol


def solve_rb_cornish_fisher(tensors: MomentTensors, budgets, alpha: float = 0.99,
                            order: int = 4) -> RbSolution:
    """Long-only RB for the Cornish-Fisher VaR built on comoment tensors.

    Stationary points of VaR(x) - sum b_i ln x_i satisfy x_i dVaR/dx_i = b_i.
    The search runs in log coordinates from the volatility RB portfolio.
    The CF VaR need not be convex, so the residual is checked on exit.
    """
    b = np.asarray(budgets, dtype=float)
    n = tensors.n
    if b.size != n:
        raise ValidationError("budgets and tensors differ in size")
    if np.any(b <= 0):
        raise ValidationError("Cornish-Fisher budgets must be strictly positive")
    if not 0.5 <= alpha < 1.0:
        raise ValidationError(f"confidence level {alpha} outside [0.5, 1)")
    b = b / b.sum()
    cov = np.asarray(tensors.m2, dtype=float)
    x0 = solve_rb(RbProblem(cov, b)).x
    var0, _ = cornish_fisher_var_gradient(x0, tensors, alpha, order)
    if var0 <= 0:
        raise ValidationError("Cornish-Fisher VaR of the starting portfolio is not positive")

    def fun(u):
        x = np.exp(u)
        var, g = cornish_fisher_var_gradient(x, tensors, alpha, order)
        return var - float(b @ u), x * g - b

    res = minimize(fun, np.log(x0 / var0), jac=True, method="BFGS", options={"gtol": 1e-13, "maxiter": 5000})
    x = np.exp(res.x)
    x = x / x.sum()
    dec = risk_decomposition_cornish_fisher(x, tensors, alpha, order)
    residual = float(np.abs(dec.shares - b).max())
    if residual > RESIDUAL_TOL:
        raise RbConvergenceError(f"Cornish-Fisher risk budgeting failed (residual {residual:.2e})", x)
    return RbSolution(x, dec, int(res.nit), residual, "cornish-fisher")


def solve_rb_long_short(cov, budgets, signs, problem: RbProblem | None = None) -> RbSolution:
    """RB with a prescribed sign pattern via y = diag(signs) x.

    The long-only problem is solved under S Sigma S and mapped back; the
    gross exposure sum |x_i| is pinned to 1.
    """
    cov = np.asarray(cov, dtype=float)
    s = np.asarray(signs, dtype=float)
    if not np.all(np.isin(s, (-1.0, 1.0))):
        raise ValidationError("signs must be +1 or -1")
    b = np.asarray(budgets, dtype=float)
    b = b / b.sum()
    cov_s = cov * np.outer(s, s)
    measure = problem.measure if problem is not None else "volatility"
    mu = None
    if problem is not None and problem.mu is not None:
        mu = problem.mu * s
    sub = RbProblem(cov_s, b, measure, problem.alpha if problem else 0.99, mu)
    y = solve_rb(sub).x
    x = s * y
    x = x / np.abs(x).sum()
    if measure in ("es", "var"):
        return _finish(x, cov, b, "long-short", 0, mu=problem.mu if problem.mu is not None else np.zeros(b.size),
                       alpha=problem.alpha, measure=measure)
    return _finish(x, cov, b, "long-short", 0)


# -- zero budgets ---------------------------------------------------------------

def enumerate_zero_budget_solutions(cov, budgets, max_count: int | None = None) -> list[RbSolution]:
    """All RB portfolios compatible with the zero budgets.

    For every subset S of zero-budget assets, RB is solved on the positive-budget
    assets plus S with the S-weights free; the pattern is kept when the S-weights
    come out strictly positive, so their marginal risk is exactly zero.
    Ordering: by subset size, then lexicographically.
    """
    cov = np.asarray(cov, dtype=float)
    check_psd(cov, "covariance matrix")
    b = np.asarray(budgets, dtype=float)
    if np.any(b < 0) or not np.any(b > 0):
        raise ValidationError("budgets must be nonnegative with at least one positive entry")
    b = b / b.sum()
    zero = np.flatnonzero(b == 0)
    pos = np.flatnonzero(b > 0)
    if zero.size > 10:
        raise ValidationError("too many zero budgets to enumerate (limit 10)")
    out: list[RbSolution] = []
    for r in range(zero.size + 1):
        for S in itertools.combinations(zero.tolist(), r):
            act = np.sort(np.concatenate([pos, np.array(S, dtype=int)]))
            sub = cov[np.ix_(act, act)]
            bs = b[act]
            free = bs == 0
            try:
                if np.linalg.eigvalsh(sub).min() <= 1e-12 * max(1.0, np.abs(sub).max()) and free.any():
                    continue
                x0 = np.where(free, 0.0, np.sqrt(bs / np.diag(sub)))
                y, it = _rb_variance_newton(sub, bs, free=free, x0=x0)
            except np.linalg.LinAlgError:
                continue
            if free.any() and np.any(y[free] <= 1e-10 * y.sum()):
                continue
            if y.sum() <= 0:
                continue
            x = np.zeros(b.size)
            x[act] = y / y.sum()
            sol = _finish(x, cov, b, "enumeration", it, extra={"subset": tuple(int(i) for i in S)})
            if sol.residual > RESIDUAL_TOL:
                continue
            if any(np.abs(sol.x - o.x).max() <= DEDUPE_TOL for o in out):
                continue
            out.append(sol)
            if max_count is not None and len(out) >= max_count:
                return out
    return out


# -- closed forms -------------------------------------------------------------

def _normalize(v):
    v = np.asarray(v, dtype=float)
    s = v.sum()
    if abs(s) < 1e-300:
        raise ValidationError("closed form has a zero normalizer")
    return v / s


def closed_forms(kind: str, **params) -> np.ndarray:
    """Closed-form portfolios.

    kinds and parameters:
      rp_inverse_vol (sigma), rb_zero_correlation (sigma, budgets),
      tangency_zero_correlation (mu, sigma, r), mv_constant_correlation
      (sigma, rho), mv_one_factor (beta, sigma_m, specific),
      mdp_one_factor (beta, sigma_m, specific), mdp (cov).
    """
    if kind == "rp_inverse_vol":
        return _normalize(1.0 / np.asarray(params["sigma"], float))
    if kind == "rb_zero_correlation":
        sig = np.asarray(params["sigma"], float)
        return _normalize(np.sqrt(np.asarray(params["budgets"], float)) / sig)
    if kind == "tangency_zero_correlation":
        sig = np.asarray(params["sigma"], float)
        return _normalize((np.asarray(params["mu"], float) - params.get("r", 0.0)) / sig ** 2)
    if kind == "mv_constant_correlation":
        sig = np.asarray(params["sigma"], float)
        rho = float(params["rho"])
        n = sig.size
        if rho < -1.0 / (n - 1) - 1e-12 or rho > 1:
            raise ValidationError(f"constant correlation {rho} outside [-1/(n-1), 1]")
        s = 1.0 / sig
        a = (n - 1) * rho * s ** 2
        b = s ** 2 - rho * s * s.sum()
        return _normalize(a + b)
    if kind == "mv_one_factor":
        beta = np.asarray(params["beta"], float)
        sm = float(params["sigma_m"])
        resid = np.asarray(params["specific"], float)
        bstar = critical_correlation("mv_one_factor", beta=beta, sigma_m=sm, specific=resid)
        return _normalize((1 - beta / bstar) / resid ** 2)
    if kind == "mdp_one_factor":
        beta = np.asarray(params["beta"], float)
        sm = float(params["sigma_m"])
        resid = np.asarray(params["specific"], float)
        sig = np.sqrt(beta ** 2 * sm ** 2 + resid ** 2)
        rho_m = beta * sm / sig
        rstar = critical_correlation("mdp", rho_m=rho_m)
        return _normalize(sig / resid ** 2 * (1 - rho_m / rstar))
    if kind == "mdp":
        cov = np.asarray(params["cov"], float)
        return _normalize(np.linalg.solve(cov, np.sqrt(np.diag(cov))))
    raise ValidationError(f"unknown closed form {kind!r}")


def critical_correlation(kind: str, **params) -> float:
    """Threshold beyond which a closed-form weight turns negative.

    mv: rho* = s_+ / (sum s_j - (n-1) s_+) with s = 1/sigma, s_+ the smallest;
    inf when the denominator is not positive (the constraint never binds).
    mv_one_factor: beta*.  mdp: rho* on the asset-market correlations.
    """
    if kind == "mv":
        sig = np.asarray(params["sigma"], float)
        s = 1.0 / sig
        n = s.size
        sp = s.min()
        den = s.sum() - (n - 1) * sp
        if abs(den) < 1e-300:
            raise ValidationError("critical correlation denominator is zero")
        return float(sp / den) if den > 0 else math.inf
    if kind == "mv_one_factor":
        beta = np.asarray(params["beta"], float)
        sm2 = float(params["sigma_m"]) ** 2
        spec2 = np.asarray(params["specific"], float) ** 2
        den = sm2 * float((beta / spec2).sum())
        if den == 0:
            raise ValidationError("beta* denominator is zero")
        return (1 + sm2 * float((beta ** 2 / spec2).sum())) / den
    if kind == "mdp":
        r = np.asarray(params["rho_m"], float)
        if np.any(np.abs(r) >= 1):
            raise ValidationError("asset-market correlations must lie in (-1, 1)")
        q = 1 - r ** 2
        den = float((r / q).sum())
        if den == 0:
            raise ValidationError("rho* denominator is zero")
        return (1 + float((r ** 2 / q).sum())) / den
    raise ValidationError(f"unknown critical correlation kind {kind!r}")
