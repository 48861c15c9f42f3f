"""Mean-variance optimizers and their extensions.

All programs are routed through :mod:`artifact.qp`.  Risk tolerance is
expressed as gamma = 1/phi, the objective being 1/2 x'Sigma x - gamma x'mu.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AssetUniverse, ValidationError
from .qp import QpError, QpProblem, QpSolution, solve_qp

logger = logging.getLogger(__name__)

GAMMA_CAP = 2.0 ** 60
SIGMA_TOL = 1e-6


class InfeasibleError(RuntimeError):
    """Raised when a program has no solution (maps to CLI exit code 2)."""


@dataclass
class Constraints:
    """Linear constraint set shared by the optimizers.

    ``budget`` adds 1'x = 1.  Extra rows: A x = B and C x >= D.
    """

    budget: bool = True
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    C: np.ndarray | None = None
    D: np.ndarray | None = None

    @classmethod
    def long_only(cls, n: int | None = None, upper: float = 1.0) -> "Constraints":
        return cls(budget=True, lower=0.0, upper=upper)

    @classmethod
    def from_dict(cls, d: dict) -> "Constraints":
        bounds = d.get("bounds") or {}
        ineq = d.get("ineq") or {}
        eq = d.get("eq") or {}
        return cls(
            budget=bool(d.get("budget", True)),
            lower=bounds.get("lower"),
            upper=bounds.get("upper"),
            A=eq.get("A"),
            B=eq.get("B"),
            C=ineq.get("C"),
            D=ineq.get("D"),
        )

    @classmethod
    def from_json(cls, path) -> "Constraints":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def equality(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        rows, rhs = [], []
        if self.budget:
            rows.append(np.ones((1, n)))
            rhs.append(np.ones(1))
        if self.A is not None:
            rows.append(np.atleast_2d(np.asarray(self.A, dtype=float)))
            rhs.append(np.atleast_1d(np.asarray(self.B, dtype=float)))
        if not rows:
            return np.zeros((0, n)), np.zeros(0)
        return np.vstack(rows), np.concatenate(rhs)

    def problem(self, Q, R) -> QpProblem:
        n = np.asarray(Q).shape[0]
        A, B = self.equality(n)
        return QpProblem(Q=Q, R=R, A=A, B=B, C=self.C, D=self.D,
                         lower=self.lower, upper=self.upper)

    @property
    def unconstrained(self) -> bool:
        return (self.lower is None and self.upper is None and self.A is None
                and self.C is None)


def _solve(problem: QpProblem) -> QpSolution:
    sol = solve_qp(problem)
    if sol.status == "infeasible":
        raise InfeasibleError("the constraint set is empty")
    if sol.status != "optimal":
        raise QpError(f"QP did not converge ({sol.status})")
    return sol


def _cons(constraints: Constraints | None) -> Constraints:
    return constraints if constraints is not None else Constraints()


# -- gamma and sigma problems ----------------------------------------------

def solve_gamma_problem(universe: AssetUniverse, gamma: float,
                        constraints: Constraints | None = None,
                        mu=None) -> np.ndarray:
    """argmin 1/2 x'Sigma x - gamma x'mu under the constraints.

    Negative gamma is accepted: it traces the inefficient branch of the
    unconstrained frontier.
    """
    mu = universe.mu if mu is None else np.asarray(mu, dtype=float)
    return _solve(_cons(constraints).problem(universe.cov, gamma * mu)).x


def solve_gamma_full(universe: AssetUniverse, gamma: float,
                     constraints: Constraints | None = None) -> QpSolution:
    return _solve(_cons(constraints).problem(universe.cov, gamma * universe.mu))


def _vol(x, cov) -> float:
    return math.sqrt(max(float(x @ cov @ x), 0.0))


def solve_sigma_target(universe: AssetUniverse, sigma_target: float,
                       constraints: Constraints | None = None,
                       tol: float = SIGMA_TOL) -> tuple[np.ndarray, float]:
    """Portfolio on the frontier with volatility ``sigma_target`` and its gamma."""
    cov = universe.cov
    x0 = solve_gamma_problem(universe, 0.0, constraints)
    s0 = _vol(x0, cov)
    if sigma_target < s0 - tol:
        raise InfeasibleError(
            f"There is no solution when the target volatility is {sigma_target:.4%}: "
            f"the minimum attainable volatility is {s0:.4%}"
        )
    if abs(sigma_target - s0) <= tol:
        return x0, 0.0
    hi = 1.0
    while True:
        x_hi = solve_gamma_problem(universe, hi, constraints)
        if _vol(x_hi, cov) >= sigma_target:
            break
        if hi >= GAMMA_CAP:
            raise InfeasibleError(
                f"There is no solution when the target volatility is {sigma_target:.4%}: "
                f"the maximum attainable volatility is {_vol(x_hi, cov):.4%}"
            )
        hi *= 2.0
    lo = 0.0
    x = x_hi
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        x = solve_gamma_problem(universe, mid, constraints)
        s = _vol(x, cov)
        if abs(s - sigma_target) <= tol:
            return x, mid
        if s < sigma_target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return x, mid


def efficient_frontier(universe: AssetUniverse, gammas,
                       constraints: Constraints | None = None) -> list[dict]:
    rows = []
    for g in gammas:
        x = solve_gamma_problem(universe, float(g), constraints)
        rows.append({"gamma": float(g), "x": x, "mu": float(universe.mu @ x),
                     "sigma": _vol(x, universe.cov)})
    return rows


# -- closed-form portfolios --------------------------------------------------

def minimum_variance(universe: AssetUniverse, constraints: Constraints | None = None) -> np.ndarray:
    c = _cons(constraints)
    if c.budget and c.unconstrained:
        ones = np.ones(universe.n)
        try:
            w = np.linalg.solve(universe.cov, ones)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("singular covariance matrix: add constraints") from exc
        return w / w.sum()
    return solve_gamma_problem(universe, 0.0, c)


def tangency_portfolio(universe: AssetUniverse, r: float,
                       constraints: Constraints | None = None) -> np.ndarray:
    """Maximum Sharpe ratio portfolio."""
    c = _cons(constraints)
    excess = universe.mu - r
    if c.unconstrained:
        w = np.linalg.solve(universe.cov, excess)
        den = w.sum()
        if abs(den) < 1e-14 * max(1.0, np.abs(w).max()):
            raise ValidationError("degenerate tangency portfolio: 1'Sigma^-1(mu - r) = 0")
        return w / den
    return _max_ratio_on_frontier(universe, excess, c)


def _max_ratio_on_frontier(universe: AssetUniverse, score, c: Constraints) -> np.ndarray:
    """Maximize score'x / sigma(x) by sweeping gamma along the frontier."""
    cov = universe.cov
    score = np.asarray(score, dtype=float)

    def ratio(g):
        x = solve_gamma_problem(universe, g, c, mu=score)
        s = _vol(x, cov)
        return (float(score @ x) / s if s > 0 else -np.inf), x

    grid = [0.0] + list(np.logspace(-4, 3, 36))
    vals = [ratio(g) for g in grid]
    k = int(np.argmax([v[0] for v in vals]))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    # golden-section refinement
    phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c1, c2 = b - phi * (b - a), a + phi * (b - a)
    f1, f2 = ratio(c1)[0], ratio(c2)[0]
    for _ in range(80):
        if f1 < f2:
            a, c1, f1 = c1, c2, f2
            c2 = a + phi * (b - a)
            f2 = ratio(c2)[0]
        else:
            b, c2, f2 = c2, c1, f1
            c1 = b - phi * (b - a)
            f1 = ratio(c1)[0]
        if b - a < 1e-10 * max(1.0, b):
            break
    best = max([ratio(0.5 * (a + b)), vals[k]], key=lambda v: v[0])
    return best[1]


def sharpe_ratio(x, universe: AssetUniverse, r: float) -> float:
    x = np.asarray(x, dtype=float)
    return (float(universe.mu @ x) - r) / _vol(x, universe.cov)


def most_diversified(universe: AssetUniverse, constraints: Constraints | None = None) -> np.ndarray:
    """Maximum diversification ratio portfolio (max-SR with mu - r replaced by sigma)."""
    c = _cons(constraints)
    if c.unconstrained:
        w = np.linalg.solve(universe.cov, universe.sigma)
        if abs(w.sum()) < 1e-14:
            raise ValidationError("degenerate most diversified portfolio")
        return w / w.sum()
    return _max_ratio_on_frontier(universe, universe.sigma, c)


def add_risk_free(universe: AssetUniverse, r: float, name: str = "cash") -> AssetUniverse:
    n = universe.n
    rho = np.eye(n + 1)
    rho[:n, :n] = universe.rho
    return AssetUniverse(np.append(universe.mu, r), np.append(universe.sigma, 0.0), rho,
                         list(universe.names) + [name])


# -- tracking error --------------------------------------------------------

def solve_tracking_error(universe: AssetUniverse, b, gamma: float,
                         constraints: Constraints | None = None) -> np.ndarray:
    """argmin 1/2 x'Sigma x - x'(gamma mu + Sigma b)."""
    b = np.asarray(b, dtype=float)
    R = gamma * universe.mu + universe.cov @ b
    return _solve(_cons(constraints).problem(universe.cov, R)).x


def tracking_error_frontier(universe: AssetUniverse, b, te_target: float | None = None,
                            gammas=None, constraints: Constraints | None = None,
                            tol: float = SIGMA_TOL):
    """TE-efficient portfolios for a grid of gammas or a single TE target."""
    b = np.asarray(b, dtype=float)
    cov = universe.cov
    if te_target is None:
        return [solve_tracking_error(universe, b, float(g), constraints) for g in gammas]
    te = lambda x: _vol(x - b, cov)  # noqa: E731
    if te_target <= tol:
        return solve_tracking_error(universe, b, 0.0, constraints), 0.0
    hi = 1.0
    while True:
        x_hi = solve_tracking_error(universe, b, hi, constraints)
        if te(x_hi) >= te_target:
            break
        if hi >= GAMMA_CAP:
            raise InfeasibleError(
                f"tracking error {te_target:.4%} unreachable; maximum is {te(x_hi):.4%}")
        hi *= 2.0
    lo, x, mid = 0.0, x_hi, hi
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        x = solve_tracking_error(universe, b, mid, constraints)
        s = te(x)
        if abs(s - te_target) <= tol:
            break
        lo, hi = (mid, hi) if s < te_target else (lo, mid)
    return x, mid


def max_tracking_error(universe: AssetUniverse, b, constraints: Constraints | None = None):
    """Largest tracking error over a polytope; attained at a vertex."""
    from scipy.optimize import linprog  # vertex enumeration over a small LP

    c = _cons(constraints)
    b = np.asarray(b, dtype=float)
    n = universe.n
    A, B = c.equality(n)
    lo = np.full(n, -np.inf) if c.lower is None else np.broadcast_to(np.asarray(c.lower, float), (n,))
    hi = np.full(n, np.inf) if c.upper is None else np.broadcast_to(np.asarray(c.upper, float), (n,))
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValidationError("maximum tracking error requires a bounded feasible set")
    best, best_x = -1.0, None
    # the convex TE is maximized at a vertex: probe vertices through random LP objectives
    rng = np.random.default_rng(0)
    directions = list(np.eye(n)) + list(-np.eye(n)) + list(rng.standard_normal((8 * n, n)))
    for d in directions:
        res = linprog(-d, A_eq=A if A.size else None, b_eq=B if A.size else None,
                      A_ub=-np.asarray(c.C, float) if c.C is not None else None,
                      b_ub=-np.asarray(c.D, float) if c.C is not None else None,
                      bounds=list(zip(lo, hi)), method="highs")
        if res.status == 0:
            v = _vol(res.x - b, universe.cov)
            if v > best + 1e-14:
                best, best_x = v, res.x
    return best_x, best


# -- turnover and transaction costs ------------------------------------------

def solve_turnover_constrained(universe: AssetUniverse, gamma: float, x0, tau_max: float,
                               constraints: Constraints | None = None) -> np.ndarray:
    """gamma-problem with sum |x - x0| <= tau_max via x = x0 + x_plus - x_minus."""
    if tau_max < 0:
        raise ValidationError("turnover limit must be nonnegative")
    c = _cons(constraints)
    n = universe.n
    x0 = np.asarray(x0, dtype=float)
    Q = np.zeros((3 * n, 3 * n))
    Q[:n, :n] = universe.cov
    R = np.concatenate([gamma * universe.mu, np.zeros(2 * n)])
    A0, B0 = c.equality(n)
    A = [np.hstack([A0, np.zeros((A0.shape[0], 2 * n))]),
         np.hstack([np.eye(n), np.eye(n), -np.eye(n)])]  # x + x_minus - x_plus = x0
    B = [B0, x0]
    Crows = [np.concatenate([np.zeros(n), -np.ones(2 * n)])[None, :]]
    Drhs = [np.array([-tau_max])]
    if c.C is not None:
        Cc = np.atleast_2d(np.asarray(c.C, float))
        Crows.append(np.hstack([Cc, np.zeros((Cc.shape[0], 2 * n))]))
        Drhs.append(np.atleast_1d(np.asarray(c.D, float)))
    lo = np.concatenate([_bound(c.lower, n, -np.inf), np.zeros(2 * n)])
    hi = np.concatenate([_bound(c.upper, n, np.inf), np.full(2 * n, np.inf)])
    prob = QpProblem(Q=Q, R=R, A=np.vstack(A), B=np.concatenate(B),
                     C=np.vstack(Crows), D=np.concatenate(Drhs), lower=lo, upper=hi)
    sol = solve_qp(prob)
    if sol.status == "infeasible":
        raise InfeasibleError(f"no portfolio satisfies the turnover limit {tau_max:.2%}")
    if sol.status != "optimal":
        raise QpError(sol.status)
    return sol.x[:n]


def _bound(v, n, default):
    if v is None:
        return np.full(n, default)
    return np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()


@dataclass
class CostResult:
    x: np.ndarray
    sell: np.ndarray
    buy: np.ndarray
    cost: float
    gross_return: float
    net_return: float


def solve_with_transaction_costs(universe: AssetUniverse, gamma: float, x0, c_minus, c_plus,
                                 lower=0.0, upper=1.0) -> CostResult:
    """Cost-aware gamma-problem over X = (x, x_minus, x_plus).

    Budget 1'x + C = 1 with C = c_minus'x_minus + c_plus'x_plus, and
    x + x_minus - x_plus = x0.  The objective is 1/2 x'Sigma x - gamma (x'mu - C).
    For very small gamma the program may churn and spend capital on costs,
    because that lowers the variance; volatility stays increasing in gamma.
    """
    n = universe.n
    x0 = np.asarray(x0, dtype=float)
    cm = np.broadcast_to(np.asarray(c_minus, float), (n,))
    cp = np.broadcast_to(np.asarray(c_plus, float), (n,))
    if np.any(cm < 0) or np.any(cp < 0):
        raise ValidationError("transaction costs must be nonnegative")
    Q = np.zeros((3 * n, 3 * n))
    Q[:n, :n] = universe.cov
    R = gamma * np.concatenate([universe.mu, -cm, -cp])
    A = np.vstack([np.concatenate([np.ones(n), cm, cp])[None, :],
                   np.hstack([np.eye(n), np.eye(n), -np.eye(n)])])
    B = np.concatenate([[1.0], x0])
    lo = np.concatenate([_bound(lower, n, -np.inf), np.zeros(2 * n)])
    hi = np.concatenate([_bound(upper, n, np.inf), np.full(2 * n, np.inf)])
    sol = solve_qp(QpProblem(Q=Q, R=R, A=A, B=B, lower=lo, upper=hi))
    if sol.status == "infeasible":
        raise InfeasibleError("transaction-cost program is infeasible")
    if sol.status != "optimal":
        raise QpError(sol.status)
    x, xm, xp = sol.x[:n], sol.x[n:2 * n], sol.x[2 * n:]
    cost = float(cm @ xm + cp @ xp)
    gross = float(universe.mu @ x)
    return CostResult(x, xm, xp, cost, gross, gross - cost)


# -- Black-Litterman ---------------------------------------------------------

@dataclass
class BlViews:
    P: np.ndarray
    Q: np.ndarray
    Omega: np.ndarray
    tau: float

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.Q = np.atleast_1d(np.asarray(self.Q, dtype=float))
        self.Omega = np.atleast_2d(np.asarray(self.Omega, dtype=float))
        k = self.P.shape[0]
        if self.Q.size != k or self.Omega.shape != (k, k):
            raise ValidationError("views P, Q and Omega have inconsistent shapes")
        if self.tau < 0:
            raise ValidationError("tau must be nonnegative")
        if np.linalg.eigvalsh(0.5 * (self.Omega + self.Omega.T)).min() < -1e-12:
            raise ValidationError("Omega must be positive semi-definite")


@dataclass
class BlResult:
    phi: float
    implied: np.ndarray
    posterior: np.ndarray
    x: np.ndarray
    extra: dict = field(default_factory=dict)


def black_litterman(universe: AssetUniverse, b, r: float, views: BlViews,
                    sr: float | None = None, budget: bool = True) -> BlResult:
    """Implied premia from the benchmark, posterior returns and the BL portfolio."""
    b = np.asarray(b, dtype=float)
    cov = universe.cov
    sb = _vol(b, cov)
    if sb <= 0:
        raise ValidationError("benchmark has zero volatility")
    if sr is None:
        sr = (float(universe.mu @ b) - r) / sb
    phi = sr / sb
    implied = r + sr * (cov @ b) / sb
    P, Q, Om, tau = views.P, views.Q, views.Omega, views.tau
    M = tau * P @ cov @ P.T + Om
    try:
        adj = tau * cov @ P.T @ np.linalg.solve(M, Q - P @ implied)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("P tau Sigma P' + Omega is singular") from exc
    posterior = implied + adj
    if phi <= 0:
        raise ValidationError("implied risk aversion must be positive")
    c = Constraints(budget=budget)
    x = _solve(c.problem(cov, (posterior - r) / phi)).x
    return BlResult(phi, implied, posterior, x)


def bl_calibrate_tau(universe: AssetUniverse, b, r: float, views: BlViews, te_target: float,
                     tau_hi: float = 1.0, tol: float = SIGMA_TOL) -> float:
    """Bisection on tau so that the BL portfolio has the requested tracking error."""
    b = np.asarray(b, dtype=float)

    def te(tau):
        v = BlViews(views.P, views.Q, views.Omega, tau)
        x = black_litterman(universe, b, r, v).x
        return _vol(x - b, universe.cov)

    if te_target <= 0:
        return 0.0
    grid = np.linspace(0, tau_hi, 11)
    vals = [te(t) for t in grid]
    if np.any(np.diff(vals) < -1e-10):
        logger.warning("tracking error is not monotone in tau on [0, %g]", tau_hi)
    if te_target > vals[-1]:
        raise InfeasibleError(f"target {te_target:.4%} above the bracket maximum {vals[-1]:.4%}")
    lo, hi = 0.0, tau_hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        v = te(mid)
        if abs(v - te_target) <= tol:
            return mid
        lo, hi = (mid, hi) if v < te_target else (lo, mid)
    return 0.5 * (lo + hi)


# -- Jagannathan-Ma ----------------------------------------------------------

@dataclass
class JmResult:
    x: np.ndarray
    cov: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    smallest_eigenvalue: float


def jagannathan_ma_covariance(universe: AssetUniverse,
                              constraints: Constraints | None = None) -> JmResult:
    """Implied covariance that makes the constrained MV portfolio unconstrained-optimal.

    Every constraint other than the budget, written as C x >= D with
    multipliers lam, shifts the covariance by -(C'lam 1' + 1 lam'C).
    Bounds give the familiar (lam_plus - lam_minus) 1' + 1 (lam_plus - lam_minus)'.
    """
    c = _cons(constraints)
    if not c.budget:
        raise ValidationError("the implied covariance needs the budget constraint")
    sol = solve_gamma_full(universe, 0.0, c)
    n = universe.n
    ones = np.ones(n)
    v = sol.lam_upper - sol.lam_lower
    if c.C is not None:
        v = v - np.atleast_2d(np.asarray(c.C, float)).T @ sol.lam
    if c.A is not None:
        # extra equality rows behave as a pair of opposite inequalities
        v = v - np.atleast_2d(np.asarray(c.A, float)).T @ sol.nu[1:]
    cov_t = universe.cov + np.outer(v, ones) + np.outer(ones, v)
    cov_t = 0.5 * (cov_t + cov_t.T)
    d = np.diag(cov_t)
    sig = np.sqrt(np.clip(d, 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = cov_t / np.outer(sig, sig)
    return JmResult(sol.x, cov_t, sig, rho, float(np.linalg.eigvalsh(cov_t).min()))
