"""Rolling-window rebalancing backtests and dynamic risk budgets.

At every rebalance date the sample mean and covariance (denominator T) are
estimated on the trailing window, an allocation rule maps them to weights,
and the weights drift with returns until the next rebalance.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analytics import turnover
from .core import AssetUniverse, RiskBudget, ValidationError
from .optimizers import minimum_variance, tangency_portfolio
from .riskparity import RbProblem, closed_forms, solve_rb

logger = logging.getLogger(__name__)


def _date_key(d: str):
    try:
        return (0, dt.date.fromisoformat(d))
    except ValueError:
        pass
    try:
        return (1, float(d))
    except ValueError:
        return (2, d)


@dataclass
class ReturnPanel:
    dates: list
    returns: np.ndarray
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.dates = [str(d) for d in self.dates]
        self.returns = np.atleast_2d(np.asarray(self.returns, dtype=float))
        T, n = self.returns.shape
        if len(self.dates) != T:
            raise ValidationError("one date per row of returns is required")
        if not np.all(np.isfinite(self.returns)):
            raise ValidationError("return panel contains NaN or inf")
        keys = [_date_key(d) for d in self.dates]
        if any(a[0] != b[0] or not a < b for a, b in zip(keys, keys[1:])):
            raise ValidationError("dates must be strictly increasing")
        if not self.names:
            self.names = [f"A{i + 1}" for i in range(n)]
        if len(self.names) != n:
            raise ValidationError("one name per column is required")

    @property
    def T(self) -> int:
        return self.returns.shape[0]

    @property
    def n(self) -> int:
        return self.returns.shape[1]

    @classmethod
    def from_csv(cls, path) -> "ReturnPanel":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
        if not header or header[0].strip().lower() != "date":
            raise ValidationError("panel CSV must start with a 'date' column")
        dates = [r[0] for r in rows]
        try:
            data = [[float(v) for v in r[1:]] for r in rows]
        except ValueError as exc:
            raise ValidationError(f"non-numeric return in {path}: {exc}") from exc
        return cls(dates, np.array(data), header[1:])


@dataclass
class RebalanceSchedule:
    frequency: int = 1
    window: int = 60

    def validate(self, n: int):
        if self.frequency < 1:
            raise ValidationError("rebalance frequency must be at least one period")
        if self.window < n + 2:
            raise ValidationError(f"estimation window {self.window} too short for {n} assets (need n + 2)")


def sample_moments(returns) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(returns, dtype=float)
    mu = r.mean(axis=0)
    d = r - mu
    return mu, d.T @ d / r.shape[0]


def dynamic_budgets(pi_t, sigma_t, pi_inf=None, sigma_inf=None, mode: str = "tactical") -> RiskBudget:
    """Risk budgets proportional to squared Sharpe ratios.

    long-run: pi_inf^2 / sigma_inf^2; tactical: pi_t^2 / sigma_t^2;
    variant: b(inf) sigma_t^2 / sigma_inf^2.
    """
    def sq_sharpe(p, s):
        p, s = np.asarray(p, float), np.asarray(s, float)
        if np.any(s <= 0):
            raise ValidationError("volatilities must be positive")
        return (p / s) ** 2

    if mode == "tactical":
        v = sq_sharpe(pi_t, sigma_t)
    elif mode in ("long-run", "variant"):
        if pi_inf is None or sigma_inf is None:
            raise ValidationError(f"{mode} budgets need long-run premia and volatilities")
        v = sq_sharpe(pi_inf, sigma_inf)
        if mode == "variant":
            v = v / v.sum() * np.asarray(sigma_t, float) ** 2 / np.asarray(sigma_inf, float) ** 2
    else:
        raise ValidationError(f"unknown budget mode {mode!r}")
    if not np.any(v > 0):
        raise ValidationError("all risk premia are zero")
    return RiskBudget.normalized(v)


Rule = Callable[[np.ndarray, np.ndarray], np.ndarray]


def make_rule(name: str, **opts) -> Rule:
    """Allocation rules mapping (mu_hat, cov_hat) to weights.

    ew, rp, mv, erc, rb (budgets), tangency (r), dynamic (mode, r,
    pi_inf, sigma_inf).  ``diagonal=True`` drops the sample correlations.
    """
    diagonal = bool(opts.get("diagonal", False))

    def prep(cov):
        return np.diag(np.diag(cov)) if diagonal else cov

    def uni(mu, cov):
        return AssetUniverse.from_covariance(cov, mu)

    if name == "ew":
        return lambda mu, cov: np.full(mu.size, 1.0 / mu.size)
    if name == "rp":
        return lambda mu, cov: closed_forms("rp_inverse_vol", sigma=np.sqrt(np.diag(cov)))
    if name == "mv":
        return lambda mu, cov: minimum_variance(uni(mu, prep(cov)))
    if name == "erc":
        return lambda mu, cov: solve_rb(RbProblem(prep(cov), np.ones(mu.size))).x
    if name == "rb":
        budgets = np.asarray(opts["budgets"], float)
        return lambda mu, cov: solve_rb(RbProblem(prep(cov), budgets)).x
    if name == "tangency":
        r = float(opts.get("r", 0.0))
        return lambda mu, cov: tangency_portfolio(uni(mu, prep(cov)), r)
    if name == "dynamic":
        r = float(opts.get("r", 0.0))
        mode = opts.get("mode", "tactical")

        def rule(mu, cov):
            c = prep(cov)
            sig = np.sqrt(np.diag(c))
            b = dynamic_budgets(mu - r, sig, opts.get("pi_inf"), opts.get("sigma_inf"), mode)
            return solve_rb(RbProblem(c, b.budgets)).x

        return rule
    raise ValidationError(f"unknown allocation rule {name!r}")


@dataclass
class BacktestResult:
    rebalance_dates: list
    weights: np.ndarray
    nav_dates: list
    nav: np.ndarray
    turnovers: list
    stats: dict


def run_backtest(panel: ReturnPanel, schedule: RebalanceSchedule, rule, capital: float = 1.0,
                 periods_per_year: int = 12, rf: float = 0.0, freeze: bool = False) -> BacktestResult:
    """Simulate the strategy; ``rule`` is a name accepted by make_rule or a callable."""
    if isinstance(rule, str):
        rule = make_rule(rule)
    schedule.validate(panel.n)
    R = panel.returns
    T, n = R.shape
    if T <= schedule.window:
        raise ValidationError(f"panel has {T} periods; window {schedule.window} leaves nothing to trade")
    w = None
    reb_dates, reb_weights, turnovers = [], [], []
    nav = [capital]
    nav_dates = [panel.dates[schedule.window - 1]]
    for t in range(schedule.window, T):
        if (t - schedule.window) % schedule.frequency == 0:
            mu_hat, cov_hat = sample_moments(R[t - schedule.window:t])
            target = None
            lam_min = float(np.linalg.eigvalsh(cov_hat).min())
            if lam_min <= 1e-12 * max(float(np.trace(cov_hat)), 1e-300):
                logger.warning("singular covariance estimate at %s; keeping previous weights", panel.dates[t])
            else:
                try:
                    target = np.asarray(rule(mu_hat, cov_hat), dtype=float)
                except (ValidationError, np.linalg.LinAlgError, RuntimeError) as exc:
                    logger.warning("allocation rule failed at %s (%s); keeping previous weights",
                                   panel.dates[t], exc)
            if target is None:
                target = w if w is not None else np.full(n, 1.0 / n)
            if w is not None:
                turnovers.append(turnover(target, w))
            w = target.copy()
            reb_dates.append(panel.dates[t])
            reb_weights.append(w.copy())
        gross = 1.0 + float(w @ R[t])
        nav.append(nav[-1] * gross)
        nav_dates.append(panel.dates[t])
        if not freeze and gross != 0:
            w = w * (1.0 + R[t]) / gross
    nav = np.array(nav)
    rets = nav[1:] / nav[:-1] - 1.0
    periods = rets.size
    ann_ret = (nav[-1] / nav[0]) ** (periods_per_year / periods) - 1.0 if nav[-1] > 0 else -1.0
    ann_vol = float(rets.std()) * math.sqrt(periods_per_year)
    stats = {
        "periods": periods,
        "rebalances": len(reb_dates),
        "annualized_return": float(ann_ret),
        "annualized_volatility": ann_vol,
        "sharpe": float((ann_ret - rf) / ann_vol) if ann_vol > 0 else None,
        "average_turnover": float(np.mean(turnovers)) if turnovers else 0.0,
        "final_nav": float(nav[-1]),
    }
    return BacktestResult(reb_dates, np.array(reb_weights), nav_dates, nav, turnovers, stats)
