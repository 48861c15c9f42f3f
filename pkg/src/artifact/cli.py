"""Command-line front end.

    artifact solve mv --universe u.json [--gamma G | --sigma-target S]
    artifact risk es --dist discrete --file loss.csv --alpha 0.75
    artifact backtest --panel p.csv --rule erc --out results/
    artifact frontier --universe u.json --gammas -1,0,1
    artifact enumerate-rb --universe u.json --budgets 0.5,0.5,0

Exit codes: 0 success, 1 input error, 2 infeasible problem.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analytics, backtest, factors, measures, optimizers, riskparity
from .core import AssetUniverse, ValidationError, load_portfolio_csv, load_universe_json
from .qp import QpError, QpUnboundedError

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2


# -- reports --------------------------------------------------------------------

@dataclass
class Table:
    name: str
    columns: list
    rows: list
    percent: set = field(default_factory=set)


@dataclass
class Report:
    title: str
    scalars: list = field(default_factory=list)  # (name, value, is_percent)
    tables: list = field(default_factory=list)

    def scalar(self, name, value, percent=False):
        self.scalars.append((name, value, percent))

    def table(self, name, columns, rows, percent=()):
        self.tables.append(Table(name, list(columns), [list(r) for r in rows], set(percent)))


def _num(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _fmt(v, percent):
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            return str(v)
        return f"{100 * v:.2f}%" if percent else f"{v:.6g}"
    return str(v)


def render(report: Report, fmt: str) -> str:
    if fmt == "json":
        payload = {
            "title": report.title,
            "scalars": {k: _num(v) for k, v, _ in report.scalars},
            "tables": {
                t.name: [{c: _num(v) for c, v in zip(t.columns, r)} for r in t.rows]
                for t in report.tables
            },
        }
        return json.dumps(payload, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if report.scalars:
            w.writerow(["quantity", "value"])
            for k, v, _ in report.scalars:
                w.writerow([k, repr(_num(v)) if isinstance(v, float) else v])
        for t in report.tables:
            if buf.tell():
                buf.write("\n")
            w.writerow(t.columns)
            for r in t.rows:
                w.writerow([repr(_num(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        return buf.getvalue()
    lines = [report.title, "=" * len(report.title)]
    if report.scalars:
        width = max(len(k) for k, _, _ in report.scalars)
        for k, v, p in report.scalars:
            lines.append(f"{k.ljust(width)}  {_fmt(v, p)}")
    for t in report.tables:
        lines.append("")
        lines.append(t.name)
        cells = [[_fmt(v, j in t.percent) for j, v in enumerate(r)] for r in t.rows]
        widths = [max([len(str(c))] + [len(row[j]) for row in cells]) for j, c in enumerate(t.columns)]
        lines.append("  ".join(str(c).rjust(wd) for c, wd in zip(t.columns, widths)))
        for row in cells:
            lines.append("  ".join(c.rjust(wd) for c, wd in zip(row, widths)))
    return "\n".join(lines) + "\n"


# -- input helpers --------------------------------------------------------------

def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise ValidationError(f"cannot parse number list {text!r}") from exc


def _universe(args) -> AssetUniverse:
    if not args.universe:
        raise ValidationError("--universe is required")
    return load_universe_json(args.universe)


def _weights(text: str | None, universe: AssetUniverse | None = None) -> np.ndarray:
    if text is None:
        raise ValidationError("--weights is required")
    if Path(text).is_file():
        return load_portfolio_csv(text, universe).weights.copy()
    return _floats(text)


def _budgets(text: str | None, n: int):
    """Return (budgets, measure, alpha, signs) from a list or a budgets JSON file."""
    if text is None:
        return np.full(n, 1.0 / n), "volatility", None, None
    if Path(text).is_file():
        d = json.loads(Path(text).read_text())
        m = d.get("measure", "volatility")
        if isinstance(m, dict):
            measure = next(iter(m), None)
            alpha = float(m[measure].get("alpha", 0.99)) if measure else None
        else:
            measure, alpha = m, None
        return np.asarray(d["budgets"], float), measure, alpha, d.get("signs")
    return _floats(text), "volatility", None, None


def _constraints(args) -> optimizers.Constraints | None:
    c = None
    if getattr(args, "constraints", None):
        c = optimizers.Constraints.from_json(args.constraints)
    if getattr(args, "long_only", False):
        c = c or optimizers.Constraints()
        c.lower = 0.0 if c.lower is None else c.lower
        c.upper = 1.0 if c.upper is None else c.upper
    return c


def _decomposition(report, names, x, cov):
    dec = analytics.risk_decomposition_volatility(x, cov)
    rows = [[n, float(w), float(m), float(r), float(s)]
            for n, w, m, r, s in zip(names, x, dec.marginal, dec.contributions, dec.shares)]
    report.table("risk decomposition", ["asset", "weight", "MR", "RC", "RC*"], rows, percent={1, 2, 3, 4})
    report.scalar("volatility", dec.risk_total, True)
    report.scalar("euler_gap", dec.euler_gap)
    return dec


# -- commands -------------------------------------------------------------------

def cmd_solve(args) -> Report:
    u = _universe(args)
    kind = args.kind
    rep = Report(f"solve {kind}")
    cons = _constraints(args)
    x = None
    if kind == "mv":
        if args.sigma_target is not None:
            x, g = optimizers.solve_sigma_target(u, args.sigma_target, cons)
            rep.scalar("gamma", g)
        elif args.gamma is not None:
            sol = optimizers.solve_gamma_full(u, args.gamma, cons)
            x = sol.x
            rep.scalar("gamma", args.gamma)
            rep.scalar("kkt_residual", sol.kkt_residual)
        else:
            x = optimizers.minimum_variance(u, cons)
    elif kind == "tangency":
        x = optimizers.tangency_portfolio(u, args.r, cons)
        rep.scalar("sharpe", optimizers.sharpe_ratio(x, u, args.r))
    elif kind == "mdp":
        x = optimizers.most_diversified(u, cons)
        rep.scalar("diversification_ratio", analytics.diversification_ratio(x, u.sigma, u.cov))
    elif kind in ("erc", "rb"):
        b, measure, alpha, signs = _budgets(args.budgets if kind == "rb" else None, u.n)
        if kind == "erc" and signs is None and measure == "volatility":
            sol = riskparity.solve_erc_jacobi(u.cov)
        else:
            prob = riskparity.RbProblem(u.cov, b, measure, alpha or args.alpha or 0.99, u.mu, signs)
            sol = riskparity.solve_rb(prob)
        x = sol.x
        rep.scalar("rb_residual", sol.residual)
        rep.scalar("solver", sol.solver)
        rep.scalar("iterations", sol.iterations)
    elif kind == "bl":
        if not args.benchmark or not args.views:
            raise ValidationError("bl needs --benchmark and --views")
        b = _weights(args.benchmark, u)
        v = json.loads(Path(args.views).read_text())
        views = optimizers.BlViews(v["P"], v["Q"], v["Omega"], float(v.get("tau", args.tau)))
        res = optimizers.black_litterman(u, b, args.r, views, sr=v.get("sr"))
        x = res.x
        rep.scalar("phi", res.phi)
        rep.table("expected returns", ["asset", "implied", "posterior"],
                  [[n, float(a), float(c)] for n, a, c in zip(u.names, res.implied, res.posterior)],
                  percent={1, 2})
        rep.scalar("tracking_error", analytics.tracking_stats(x, b, u.cov, u.mu).tracking_error, True)
    elif kind == "jm":
        if cons is None:
            raise ValidationError("jm needs --constraints or --long-only")
        res = optimizers.jagannathan_ma_covariance(u, cons)
        x = res.x
        rep.scalar("smallest_eigenvalue", res.smallest_eigenvalue)
        rep.table("implied volatilities", ["asset", "sigma", "implied sigma"],
                  [[n, float(s), float(t)] for n, s, t in zip(u.names, u.sigma, res.sigma)], percent={1, 2})
    elif kind == "te":
        if not args.benchmark:
            raise ValidationError("te needs --benchmark")
        b = _weights(args.benchmark, u)
        if args.te_target is not None:
            x, g = optimizers.tracking_error_frontier(u, b, te_target=args.te_target, constraints=cons)
            rep.scalar("gamma", g)
        else:
            g = args.gamma if args.gamma is not None else 0.0
            x = optimizers.solve_tracking_error(u, b, g, cons)
            rep.scalar("gamma", g)
        st = analytics.tracking_stats(x, b, u.cov, u.mu)
        rep.scalar("excess_return", st.excess_return, True)
        rep.scalar("tracking_error", st.tracking_error, True)
        rep.scalar("information_ratio", st.information_ratio)
    else:
        raise ValidationError(f"unknown solve kind {kind!r}")
    rep.scalar("expected_return", float(u.mu @ x), True)
    _decomposition(rep, u.names, x, u.cov)
    return rep


def _loss_file(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        float(rows[0][0])
    except ValueError:
        rows = rows[1:]
    vals = np.array([float(r[0]) for r in rows])
    probs = np.array([float(r[1]) for r in rows]) if rows and len(rows[0]) > 1 else None
    return vals, probs


def cmd_risk(args) -> Report:
    kind = args.kind
    rep = Report(f"risk {kind}")
    alpha = args.alpha if args.alpha is not None else 0.99
    if kind == "cf":
        z = measures.norm_ppf(alpha)
        rep.scalar("z_gaussian", z)
        rep.scalar("z_cornish_fisher", measures.cornish_fisher_quantile(z, args.gamma1, args.gamma2, args.order))
        return rep
    if kind == "concentration":
        u = load_universe_json(args.universe) if args.universe else None
        x = _weights(args.weights, u)
        c = analytics.concentration(x)
        rep.scalar("herfindahl", c.herfindahl)
        rep.scalar("gini", c.gini)
        rep.scalar("effective_n", c.effective_n)
        return rep
    if kind == "factors":
        if not args.model:
            raise ValidationError("factors needs --model")
        model = factors.FactorModel.from_json(args.model)
        x = _weights(args.weights)
        d = factors.factor_risk_decomposition(x, model, "gaussian-var" if args.measure == "var" else "volatility",
                                              alpha=alpha)
        rows = [[f"F{j + 1}", float(y), float(m), float(r), float(r / d.risk_total)]
                for j, (y, m, r) in enumerate(zip(d.y, d.mr, d.rc))]
        rows += [[f"S{j + 1}", float(y), float(m), float(r), float(r / d.risk_total)]
                 for j, (y, m, r) in enumerate(zip(d.y_specific, d.mr_specific, d.rc_specific))]
        rep.table("factor decomposition", ["factor", "exposure", "MR", "RC", "RC*"], rows, percent={1, 2, 3, 4})
        rep.scalar("risk", d.risk_total, True)
        rep.scalar("euler_gap", d.euler_gap)
        return rep
    if kind == "decompose":
        u = _universe(args)
        x = _weights(args.weights, u)
        if args.measure == "volatility":
            _decomposition(rep, u.names, x, u.cov)
            return rep
        fn = analytics.risk_decomposition_var if args.measure == "var" else analytics.risk_decomposition_es
        dec = fn(x, u.cov, u.mu, alpha)
        rep.table("risk decomposition", ["asset", "weight", "MR", "RC", "RC*"],
                  [[n, float(w), float(m), float(r), float(s)]
                   for n, w, m, r, s in zip(u.names, x, dec.marginal, dec.contributions, dec.shares)],
                  percent={1, 2, 3, 4})
        rep.scalar(args.measure, dec.risk_total, True)
        rep.scalar("euler_gap", dec.euler_gap)
        return rep
    if kind in ("var", "es"):
        dist = args.dist
        if dist == "discrete":
            vals, probs = _loss_file(args.file)
            var, es = measures.var_es_discrete(measures.DiscreteLoss.from_samples(vals, probs), alpha)
        elif dist == "empirical":
            vals, _ = _loss_file(args.file)
            var, es = measures.var_es_empirical(vals, alpha)
        elif dist == "pareto":
            var, es = measures.var_es_pareto(measures.ParetoLoss(args.scale, args.theta), alpha)
        elif dist == "gaussian":
            if args.universe:
                u = _universe(args)
                x = _weights(args.weights, u)
                mean, std = -float(u.mu @ x), math.sqrt(float(x @ u.cov @ x))
            else:
                mean, std = args.mean, args.std
            loss = measures.GaussianLoss(mean, std)
            var, es = measures.var_gaussian(loss, alpha), measures.es_gaussian(loss, alpha)
            if args.samples and args.universe:
                R = measures.simulate_gaussian(u.mu, u.cov, args.samples, args.seed)
                rc, es_mc = measures.mc_es_contributions(x, R, alpha)
                rep.table("monte-carlo ES contributions", ["asset", "RC"],
                          [[n, float(v)] for n, v in zip(u.names, rc)])
                rep.scalar("es_monte_carlo", es_mc)
        else:
            raise ValidationError(f"unknown distribution {dist!r}")
        rep.scalar("alpha", alpha)
        rep.scalar("var", var)
        rep.scalar("es", es)
        return rep
    raise ValidationError(f"unknown risk kind {kind!r}")


def cmd_frontier(args) -> Report:
    u = _universe(args)
    gammas = _floats(args.gammas) if args.gammas else np.linspace(0.0, 2.0, 11)
    rows = []
    for row in optimizers.efficient_frontier(u, gammas, _constraints(args)):
        rows.append([row["gamma"], *map(float, row["x"]), row["mu"], row["sigma"]])
    rep = Report("efficient frontier")
    rep.table("frontier", ["gamma", *u.names, "mu", "sigma"], rows, percent=set(range(1, u.n + 3)))
    return rep


def cmd_enumerate_rb(args) -> Report:
    u = _universe(args)
    b, *_ = _budgets(args.budgets, u.n)
    sols = riskparity.enumerate_zero_budget_solutions(u.cov, b, args.max_count)
    rep = Report("risk budgeting solutions")
    rows = [[k + 1, *map(float, s.x), s.volatility, s.residual] for k, s in enumerate(sols)]
    rep.table("solutions", ["#", *u.names, "sigma", "residual"], rows, percent=set(range(1, u.n + 2)))
    rep.scalar("count", len(sols))
    return rep


def cmd_backtest(args) -> Report:
    if not args.panel:
        raise ValidationError("--panel is required")
    panel = backtest.ReturnPanel.from_csv(args.panel)
    opts = {"r": args.r, "diagonal": args.diagonal, "mode": args.mode}
    if args.rule == "rb":
        opts["budgets"], *_ = _budgets(args.budgets, panel.n)
    rule = backtest.make_rule(args.rule, **opts)
    res = backtest.run_backtest(panel, backtest.RebalanceSchedule(args.frequency, args.window), rule,
                                periods_per_year=args.periods_per_year, rf=args.r, freeze=args.freeze)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "weights.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *panel.names])
        for d, row in zip(res.rebalance_dates, res.weights):
            w.writerow([d, *[repr(float(v)) for v in row]])
    with open(out / "nav.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "nav"])
        for d, v in zip(res.nav_dates, res.nav):
            w.writerow([d, repr(float(v))])
    (out / "stats.json").write_text(json.dumps(res.stats, indent=2, sort_keys=True) + "\n")
    rep = Report(f"backtest {args.rule}")
    for k, v in res.stats.items():
        rep.scalar(k, v, k in ("annualized_return", "annualized_volatility", "average_turnover"))
    return rep


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--universe", help="universe JSON file")
    common.add_argument("--format", choices=("table", "csv", "json"), default="table")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--alpha", type=float, default=None, help="confidence level")
    common.add_argument("--out", help="output file (directory for backtest)")

    p = argparse.ArgumentParser(prog="artifact", description="Portfolio allocation and risk budgeting toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve an allocation problem")
    s.add_argument("kind", choices=("mv", "tangency", "erc", "rb", "mdp", "bl", "jm", "te"))
    s.add_argument("--gamma", type=float)
    s.add_argument("--sigma-target", type=float)
    s.add_argument("--te-target", type=float)
    s.add_argument("--r", type=float, default=0.0, help="risk-free rate")
    s.add_argument("--constraints", help="constraint JSON file")
    s.add_argument("--long-only", action="store_true")
    s.add_argument("--budgets", help="comma list or budgets JSON file")
    s.add_argument("--benchmark", help="portfolio CSV or comma list")
    s.add_argument("--views", help="views JSON {P, Q, Omega, tau}")
    s.add_argument("--tau", type=float, default=0.05)
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("risk", parents=[common], help="risk measures and decompositions")
    r.add_argument("kind", choices=("decompose", "var", "es", "cf", "concentration", "factors"))
    r.add_argument("--weights", help="portfolio CSV or comma list")
    r.add_argument("--measure", choices=("volatility", "var", "es"), default="volatility")
    r.add_argument("--dist", choices=("gaussian", "pareto", "discrete", "empirical"), default="gaussian")
    r.add_argument("--file", help="loss CSV (one column, optional probability column)")
    r.add_argument("--mean", type=float, default=0.0)
    r.add_argument("--std", type=float, default=1.0)
    r.add_argument("--scale", type=float, default=1.0)
    r.add_argument("--theta", type=float, default=2.0)
    r.add_argument("--gamma1", type=float, default=0.0)
    r.add_argument("--gamma2", type=float, default=0.0)
    r.add_argument("--order", type=int, choices=(3, 4), default=4)
    r.add_argument("--model", help="factor model JSON")
    r.add_argument("--samples", type=int, default=0, help="Monte-Carlo draws for ES contributions")
    r.set_defaults(func=cmd_risk)

    b = sub.add_parser("backtest", parents=[common], help="rolling rebalancing backtest")
    b.add_argument("--panel", help="panel CSV date,asset1,...")
    b.add_argument("--rule", choices=("ew", "rp", "mv", "erc", "rb", "tangency", "dynamic"), default="erc")
    b.add_argument("--frequency", type=int, default=1)
    b.add_argument("--window", type=int, default=60)
    b.add_argument("--budgets")
    b.add_argument("--r", type=float, default=0.0)
    b.add_argument("--mode", choices=("tactical", "long-run", "variant"), default="tactical")
    b.add_argument("--diagonal", action="store_true", help="ignore sample correlations")
    b.add_argument("--periods-per-year", type=int, default=12)
    b.add_argument("--freeze", action="store_true", help="no weight drift between rebalances")
    b.set_defaults(func=cmd_backtest)

    f = sub.add_parser("frontier", parents=[common], help="efficient frontier over a gamma grid")
    f.add_argument("--gammas", help="comma list of gammas")
    f.add_argument("--constraints")
    f.add_argument("--long-only", action="store_true")
    f.set_defaults(func=cmd_frontier)

    e = sub.add_parser("enumerate-rb", parents=[common], help="all RB solutions for zero budgets")
    e.add_argument("--budgets", required=True)
    e.add_argument("--max-count", type=int)
    e.set_defaults(func=cmd_enumerate_rb)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        report = args.func(args)
    except optimizers.InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValidationError, QpUnboundedError, riskparity.RbConvergenceError, QpError,
            OSError, KeyError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = render(report, args.format)
    if args.out and args.command != "backtest":
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
