"""Dense convex QP solver returning primal solution and Lagrange multipliers.

Problem::

    min  1/2 x'Qx - x'R
    s.t. A x  = B
         C x >= D
         lower <= x <= upper

At the optimum the multipliers satisfy

    Qx - R - A'nu - C'lam - lam_lower + lam_upper = 0

with lam, lam_lower, lam_upper >= 0.  The algorithm is a primal active-set
method working in the null space of the active constraints.  A feasible
starting vertex is obtained from a phase-one linear program (HiGHS).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr
from scipy.optimize import linprog

from .core import ValidationError, check_psd

logger = logging.getLogger(__name__)

REG = 1e-12

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max-iterations"


class QpError(RuntimeError):
    pass


class QpUnboundedError(QpError):
    pass


@dataclass
class QpProblem:
    Q: np.ndarray
    R: np.ndarray | None = None
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    C: np.ndarray | None = None
    D: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise ValidationError(f"Q must be square, got {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-12, rtol=1e-10):
            raise ValidationError("Q is not symmetric")
        self.Q = 0.5 * (Q + Q.T)
        check_psd(self.Q, "Q", tol=1e-9)
        if self.R is not None and np.asarray(self.R).size != n:
            raise ValidationError(f"R must have {n} entries, got {np.asarray(self.R).size}")
        self.R = np.zeros(n) if self.R is None else np.asarray(self.R, dtype=float).reshape(n)
        self.A, self.B = self._rows(self.A, self.B, n, "A/B")
        self.C, self.D = self._rows(self.C, self.D, n, "C/D")
        self.lower = self._bound(self.lower, n, -np.inf)
        self.upper = self._bound(self.upper, n, np.inf)
        if np.any(self.lower > self.upper):
            raise ValidationError("lower bound above upper bound")

    @staticmethod
    def _rows(M, v, n, label):
        if M is None:
            return np.zeros((0, n)), np.zeros(0)
        M = np.atleast_2d(np.asarray(M, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if M.shape[1] != n or M.shape[0] != v.size:
            raise ValidationError(f"{label} has inconsistent shape {M.shape} / {v.shape}")
        return M, v

    @staticmethod
    def _bound(b, n, default):
        if b is None:
            return np.full(n, default)
        b = np.asarray(b, dtype=float)
        if b.ndim == 0:
            return np.full(n, float(b))
        if b.size != n:
            raise ValidationError("bound vector has wrong length")
        return b.astype(float)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def n_constraints(self) -> int:
        return (
            self.A.shape[0]
            + self.C.shape[0]
            + int(np.isfinite(self.lower).sum())
            + int(np.isfinite(self.upper).sum())
        )


@dataclass
class QpSolution:
    x: np.ndarray
    status: str
    nu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = float("nan")
    iterations: int = 0
    kkt_residual: float = float("nan")

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _independent_rows(M: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Indices of a maximal set of linearly independent rows of M, in order."""
    keep: list[int] = []
    basis = np.zeros((0, M.shape[1]))
    for i, row in enumerate(M):
        cand = np.vstack([basis, row])
        if np.linalg.matrix_rank(cand, tol=tol * max(1.0, np.abs(cand).max())) == cand.shape[0]:
            basis = cand
            keep.append(i)
    return np.array(keep, dtype=int)


def _null_space(M: np.ndarray, n: int) -> np.ndarray:
    if M.shape[0] == 0:
        return np.eye(n)
    q, r, _ = qr(M.T, pivoting=True)
    diag = np.abs(np.diag(r)) if r.size else np.zeros(0)
    rank = int((diag > 1e-12 * max(1.0, diag.max() if diag.size else 1.0)).sum())
    return q[:, rank:]


def _phase_one(p: QpProblem):
    """Find a feasible point or return None when the feasible set is empty."""
    n = p.n
    if p.C.shape[0] == 0 and not np.isfinite(p.lower).any() and not np.isfinite(p.upper).any():
        if p.A.shape[0] == 0:
            return np.zeros(n)
        x, *_ = np.linalg.lstsq(p.A, p.B, rcond=None)
        if np.abs(p.A @ x - p.B).max() > 1e-9 * (1 + np.abs(p.B).max()):
            return None
        return x
    bounds = [
        (None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
        for lo, hi in zip(p.lower, p.upper)
    ]
    res = linprog(
        np.zeros(n),
        A_ub=-p.C if p.C.shape[0] else None,
        b_ub=-p.D if p.C.shape[0] else None,
        A_eq=p.A if p.A.shape[0] else None,
        b_eq=p.B if p.A.shape[0] else None,
        bounds=bounds,
        method="highs",
    )
    if res.status != 0:
        return None
    return np.clip(res.x, p.lower, p.upper)


def solve_qp(problem: QpProblem, max_iter: int | None = None) -> QpSolution:
    """Solve a convex QP with the primal active-set method."""
    p = problem
    n = p.n
    Q, R = p.Q, p.R
    cap = max_iter if max_iter is not None else 50 * (n + p.n_constraints)

    # equality rows: drop linearly dependent ones after checking consistency
    eq_keep = _independent_rows(p.A) if p.A.shape[0] else np.zeros(0, dtype=int)
    Aeq, Beq = p.A[eq_keep], p.B[eq_keep]

    # all inequalities as G x >= h: C rows, then lower bounds, then upper bounds
    lo_idx = np.flatnonzero(np.isfinite(p.lower))
    hi_idx = np.flatnonzero(np.isfinite(p.upper))
    G = np.vstack([p.C, np.eye(n)[lo_idx], -np.eye(n)[hi_idx]])
    h = np.concatenate([p.D, p.lower[lo_idx], -p.upper[hi_idx]])
    m = G.shape[0]
    mC = p.C.shape[0]

    x = _phase_one(p)
    if x is None:
        return QpSolution(x=np.full(n, np.nan), status=INFEASIBLE)

    scale = 1.0 + np.abs(Q).max() + np.abs(R).max()
    act_tol = 1e-9

    # initial working set: active inequalities that keep the system independent
    working: list[int] = []
    M = Aeq.copy()
    for i in range(m):
        if M.shape[0] >= n:
            break
        if abs(G[i] @ x - h[i]) <= act_tol * (1 + abs(h[i])):
            cand = np.vstack([M, G[i]])
            if np.linalg.matrix_rank(cand) == cand.shape[0]:
                M = cand
                working.append(i)

    status = MAX_ITER
    it = 0
    mu_w = np.zeros(0)
    nu = np.zeros(Aeq.shape[0])
    while it < cap:
        it += 1
        M = np.vstack([Aeq, G[working]]) if working else Aeq
        g = Q @ x - R
        Z = _null_space(M, n)
        zg = Z.T @ g if Z.shape[1] else np.zeros(0)
        g_tol = 1e-12 * scale * (1 + np.abs(x).max())
        if Z.shape[1] == 0 or np.abs(zg).max() <= g_tol:
            # stationary on the current face: check multiplier signs
            if M.shape[0]:
                mult, *_ = np.linalg.lstsq(M.T, g, rcond=None)
            else:
                mult = np.zeros(0)
            nu = mult[: Aeq.shape[0]]
            mu_w = mult[Aeq.shape[0]:]
            if mu_w.size == 0 or mu_w.min() >= -1e-12 * scale:
                status = OPTIMAL
                break
            worst = mu_w.min()
            cands = [working[k] for k in range(len(working)) if mu_w[k] <= worst + 1e-15 * scale]
            drop = min(cands)
            working.remove(drop)
            continue
        H = Z.T @ Q @ Z + REG * np.eye(Z.shape[1])
        try:
            L = np.linalg.cholesky(H)
            u = -np.linalg.solve(L.T, np.linalg.solve(L, zg))
        except np.linalg.LinAlgError:
            u = -np.linalg.lstsq(H, zg, rcond=None)[0]
        step = Z @ u
        # ratio test over inactive constraints
        alpha = 1.0
        block = -1
        Gp = G @ step
        for i in range(m):
            if i in working or Gp[i] >= -1e-14 * (1 + np.abs(step).max()):
                continue
            t = max(0.0, (h[i] - G[i] @ x) / Gp[i])
            if t < alpha - 1e-15:
                alpha, block = t, i
        if block < 0 and np.abs(step).max() > 1e8 * (1 + np.abs(x).max()):
            raise QpUnboundedError("objective is unbounded below on the feasible set")
        x = x + alpha * step
        if block >= 0:
            working.append(block)
            working.sort()

    if status != OPTIMAL:
        logger.warning("active-set QP hit the iteration cap (%d)", cap)
        return QpSolution(x=x, status=MAX_ITER, iterations=it)

    lam_all = np.zeros(m)
    for k, i in enumerate(working):
        lam_all[i] = max(mu_w[k], 0.0)
    nu_full = np.zeros(p.A.shape[0])
    nu_full[eq_keep] = nu
    lam = lam_all[:mC]
    lam_lower = np.zeros(n)
    lam_lower[lo_idx] = lam_all[mC: mC + lo_idx.size]
    lam_upper = np.zeros(n)
    lam_upper[hi_idx] = lam_all[mC + lo_idx.size:]
    resid = Q @ x - R - p.A.T @ nu_full - p.C.T @ lam - lam_lower + lam_upper
    sol = QpSolution(
        x=x,
        status=OPTIMAL,
        nu=nu_full,
        lam=lam,
        lam_lower=lam_lower,
        lam_upper=lam_upper,
        objective=float(0.5 * x @ Q @ x - x @ R),
        iterations=it,
        kkt_residual=float(np.abs(resid).max()),
    )
    return sol


def extract_bound_multipliers(solution: QpSolution) -> tuple[np.ndarray, np.ndarray]:
    """Return (lambda_lower, lambda_upper) of an optimal solution."""
    if solution.status != OPTIMAL:
        raise QpError(f"multipliers requested for a non-optimal solution ({solution.status})")
    return solution.lam_lower.copy(), solution.lam_upper.copy()
