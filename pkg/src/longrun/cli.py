"""Command-line front end.

``longrun <command> [options]`` with commands ``calibrate``, ``simulate``,
``price``, ``solve``, ``verify`` and ``backtest``. Options may also come from
a flat ``key = value`` file given by ``--config``; explicit flags win. Exit
codes: 0 success, 1 verification failure, 2 I/O or data error, 64 usage.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from typing import Optional

import numpy as np

from . import backtest as bt
from .errors import (DataError, DomainError, LongrunError, StrategyError, UnsupportedMethodError)
from .models import ConstantMprModel, MmmModel, TimeGrid, calibrate_mmm, mmm_phi, model_to_kv, parse_kv, simulate_gp
from .pricing import (DEFAULT_SEED, METHODS, PowerMomentQuery, benchmark, gp_power_moment, gp_power_moment_mc,
                      martingale_check)
from .strategy import Preferences, StrategySpec, build_value_function, ez_optimal_consumption, optimal_plan_crra, \
    two_fund_holdings

EXIT_OK, EXIT_FAIL, EXIT_IO, EXIT_USAGE = 0, 1, 2, 64
COMMANDS = ("calibrate", "simulate", "price", "solve", "verify", "backtest")

DEFAULTS = {
    "seed": DEFAULT_SEED, "threads": 1, "tol": 1e-12, "model": "mmm", "alpha0": 0.1828, "eta": 0.0520,
    "theta": 0.2, "gamma": 3.0, "delta": 0.0, "epsilon": 1.0, "chi": 0, "horizon": 10.0, "steps": 120,
    "paths": 10, "t": 0.0, "v": 1.0, "s": 10.0, "method": "closed_form", "format": "generic_csv",
    "dt": 1.0 / 12.0, "V0": 1.0, "mc_paths": 20000, "perturb": False, "synthetic": 0,
    "anchor": "window",
}
FLOAT_KEYS = {"tol", "alpha0", "eta", "theta", "gamma", "delta", "epsilon", "horizon", "t", "v", "s", "dt", "V0"}
INT_KEYS = {"seed", "threads", "chi", "steps", "paths", "mc_paths", "synthetic"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="longrun", description="GP-based pricing and long-run investment strategies")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--data", help="input CSV (calibrate, backtest)")
    p.add_argument("--format", choices=bt.FORMATS, default=None)
    p.add_argument("--out", help="output file, or directory for backtest; stdout if absent")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="accepted for compatibility; runs are single-threaded")
    p.add_argument("--tol", type=float)
    p.add_argument("--model", choices=("bs", "mmm"))
    p.add_argument("--alpha0", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--chi", type=int, choices=(0, 1))
    p.add_argument("--horizon", type=float, help="T in years")
    p.add_argument("--V0", type=float, help="initial wealth")
    p.add_argument("--steps", type=int, help="time steps (simulate)")
    p.add_argument("--paths", type=int, help="number of paths (simulate)")
    p.add_argument("--t", type=float, help="valuation time (price, solve)")
    p.add_argument("--v", type=float, help="GP value at --t (price, solve)")
    p.add_argument("--s", type=float, help="moment date (price)")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--mc-paths", dest="mc_paths", type=int, help="Monte Carlo paths (price, verify)")
    p.add_argument("--dt", type=float, help="observation spacing in years (calibrate)")
    p.add_argument("--strategy", help="comma list of optimal, gp, 60/40, fixed:W, mv, risk_free, or a key = value file")
    p.add_argument("--start", help="start year (backtest) or YYYY-MM (calibrate window)")
    p.add_argument("--end", help="end year (backtest) or YYYY-MM (calibrate window)")
    p.add_argument("--anchor", choices=bt.ANCHORS,
                   help="backtest: model clock from the window start or from the series start")
    p.add_argument("--synthetic", type=int, help="backtest on a simulated MMM series of this many years")
    p.add_argument("--perturb", action="store_true", default=None, help="verify: inject a non-solution surface")
    return p


def resolve(args) -> dict:
    """Merge defaults, the config file and explicit flags (in increasing priority)."""
    cfg = dict(DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            for key, value in parse_kv(fh.read()).items():
                key = key.replace("-", "_")
                if key in FLOAT_KEYS:
                    cfg[key] = float(value)
                elif key in INT_KEYS:
                    cfg[key] = int(value)
                elif key == "perturb":
                    cfg[key] = value.lower() in ("1", "true", "yes")
                else:
                    cfg[key] = value
    for key, value in vars(args).items():
        if value is not None and key != "config":
            cfg[key] = value
    return cfg


def model_of(cfg):
    if cfg["model"] == "bs":
        return ConstantMprModel(float(cfg["theta"]))
    if cfg["model"] == "mmm":
        return MmmModel(float(cfg["alpha0"]), float(cfg["eta"]))
    raise UsageError(f"unknown model {cfg['model']!r}")


def prefs_of(cfg):
    return Preferences(float(cfg["gamma"]), float(cfg["delta"]), float(cfg["epsilon"]), int(cfg["chi"]),
                       float(cfg["horizon"]))


def _emit(text: str, out: Optional[str]):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def g17(x) -> str:
    return f"{x:.17g}"


# -- commands --------------------------------------------------------------------

def cmd_calibrate(cfg) -> int:
    if not cfg.get("data"):
        raise UsageError("calibrate needs --data")
    series = bt.load_return_series(cfg["data"], cfg["format"])
    if cfg.get("start") or cfg.get("end"):
        series = series.window(cfg.get("start") or series.dates[0], cfg.get("end") or series.dates[-1])
    model = calibrate_mmm(series.discounted, float(cfg["dt"]))
    _emit(model_to_kv(model), cfg.get("out"))
    return EXIT_OK


def cmd_simulate(cfg) -> int:
    grid = TimeGrid(0.0, float(cfg["horizon"]), int(cfg["steps"]))
    paths = simulate_gp(model_of(cfg), grid, int(cfg["paths"]), int(cfg["seed"]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"path{p}" for p in range(paths.n_paths)])
    for j, t in enumerate(grid.times):
        w.writerow([g17(t)] + [g17(x) for x in paths.values[:, j]])
    _emit(buf.getvalue(), cfg.get("out"))
    return EXIT_OK


def cmd_price(cfg) -> int:
    q = PowerMomentQuery.from_gamma(model_of(cfg), float(cfg["gamma"]), float(cfg["t"]), float(cfg["v"]),
                                    float(cfg["s"]))
    doc = {"model": cfg["model"], "gamma": float(cfg["gamma"]), "exponent": q.p, "t": q.t, "v": q.v, "s": q.s,
           "method": cfg["method"]}
    if cfg["method"] == "monte_carlo":
        res = gp_power_moment_mc(q, int(cfg["mc_paths"]), int(cfg["seed"]))
        doc.update(value=res.mean, standard_error=res.standard_error, n_paths=res.n_paths)
    else:
        doc["value"] = gp_power_moment(q, cfg["method"], float(cfg["tol"]))
    _emit(_json(doc), cfg.get("out"))
    return EXIT_OK


def cmd_solve(cfg) -> int:
    prefs, model = prefs_of(cfg), model_of(cfg)
    vf = build_value_function(prefs, model, float(cfg["V0"]), tol=float(cfg["tol"]))
    t, v = float(cfg["t"]), float(cfg["v"])
    units, riskfree = two_fund_holdings(vf, t, v)
    doc = {
        "model": cfg["model"], "gamma": prefs.gamma, "delta": prefs.delta, "epsilon": prefs.epsilon,
        "chi": prefs.chi, "horizon": prefs.horizon, "V0": vf.V0, "lambda": vf.lam,
        "t": t, "v": v, "value": float(vf(t, v)), "units_gp": units, "riskfree_value": riskfree,
        "gp_fraction": units * v / float(vf(t, v)), "consumption_rate": float(vf.consumption(t, v)),
    }
    _emit(_json(doc), cfg.get("out"))
    return EXIT_OK


def verification_suite(cfg) -> list:
    """Fast diagnostics on built-in synthetic cases; each row is a dict."""
    from .pde import Grid2D, pde_residual
    from .pricing import power_moment

    rows = []

    def check(name, value, threshold, passed):
        rows.append({"check": name, "value": float(value), "threshold": float(threshold), "passed": bool(passed)})

    mmm = MmmModel(0.1828, 0.0520)
    bs = ConstantMprModel(0.2)
    rng = np.random.default_rng(int(cfg["seed"]))
    t = rng.uniform(0, 20, 50)
    s = t + rng.uniform(0, 30, 50)
    v = rng.uniform(0.1, 5, 50)
    err = np.max(np.abs(power_moment(mmm, 0.0, t, v, s) - 1.0))
    check("mmm_moment_gamma_1", err, 1e-12, err <= 1e-12)
    rel = np.max(np.abs(power_moment(mmm, 1.0, t, v, s) / (v + 4 * (mmm_phi(mmm, s) - mmm_phi(mmm, t))) - 1))
    check("mmm_moment_gamma_half", rel, 1e-10, rel <= 1e-10)

    n_mc = int(cfg["mc_paths"])
    worst = 0.0
    for g in (2.0, 3.0, 5.0):
        for h in (1.0, 10.0, 50.0):
            q = PowerMomentQuery.from_gamma(mmm, g, 0.0, 1.0, h)
            exact = gp_power_moment(q, "series")
            mc = gp_power_moment_mc(q, n_mc, int(cfg["seed"]))
            worst = max(worst, abs(exact - mc.mean) / mc.standard_error)
    check("series_vs_monte_carlo_z", worst, 3.0, worst <= 3.0)

    gap = 0.0
    for model in (bs, mmm):
        for g in (0.5, 1.0, 3.0):
            for chi, eps in ((0, 1.0), (1, 0.0), (1, 1.0)):
                vf = build_value_function(Preferences(g, 0.03, eps, chi, 10.0), model, 2.0)
                gap = max(gap, abs(vf(0.0, 1.0) - 2.0))
    check("budget_identity", gap, 1e-8, gap <= 1e-8)

    prefs = Preferences(1.0, 0.03, 1.0, 1, 30.0)
    vf = build_value_function(prefs, mmm, 1.0)
    surface = vf
    if cfg.get("perturb"):
        def surface(tt, vv):
            return vf(tt, vv) + 0.01 * np.asarray(vv) * np.sin(tt)
    rep = pde_residual(surface, vf.consumption, mmm, Grid2D.uniform(0.0, 29.0, 101, 0.5, 2.0, 101), chi=1)
    check("pde_residual_log_consumption", rep.interior_rms, 1e-6, rep.interior_rms < 1e-6)

    paths = simulate_gp(mmm, TimeGrid(0.0, 50.0, 50), 10000, int(cfg["seed"]))
    diag = martingale_check(benchmark(np.ones_like(paths.values), paths.values))
    check("savings_account_supermartingale", diag.mean_drift / diag.standard_error, -3.0,
          diag.verdict == "strict-supermartingale-signal")

    g, d, lam = 3.0, 0.04, 0.7
    ez = Preferences(g, d, 1.0, 1, 10.0, psi=1.0 / g)
    ss = np.linspace(0.0, 10.0, 11)
    gp_vals = np.linspace(0.5, 3.0, 11)
    _, crra = optimal_plan_crra(ez, lam, 1.0, ss, gp_vals)
    plan = ez_optimal_consumption(d * lam, np.exp(-d * ss), gp_vals, -1.0, ez)
    rel = float(np.max(np.abs(plan / crra - 1.0)))
    check("epstein_zin_reduction", rel, 1e-12, rel <= 1e-12)
    return rows


def cmd_verify(cfg) -> int:
    rows = verification_suite(cfg)
    ok = all(r["passed"] for r in rows)
    _emit(_json({"passed": ok, "checks": rows}), cfg.get("out"))
    return EXIT_OK if ok else EXIT_FAIL


def parse_strategies(text: Optional[str], cfg) -> list:
    if not text:
        text = "optimal,gp,60/40,mv,risk_free"
    if os.path.isfile(text):
        with open(text) as fh:
            return [StrategySpec.from_kv(fh.read())]
    out = []
    for token in text.split(","):
        token = token.strip()
        if token == "optimal":
            out.append(StrategySpec.optimal_two_fund(model_of(cfg), gamma=float(cfg["gamma"]),
                                                     delta=float(cfg["delta"]), epsilon=float(cfg["epsilon"])))
        elif token == "gp":
            out.append(StrategySpec.gp_all_in())
        elif token == "60/40":
            out.append(StrategySpec.fixed_mix(0.6))
        elif token.startswith("fixed:"):
            out.append(StrategySpec.fixed_mix(float(token[6:])))
        elif token == "mv":
            out.append(StrategySpec.mean_variance(0.06, 0.20, 2.0 * float(cfg["gamma"])))
        elif token == "risk_free":
            out.append(StrategySpec.risk_free())
        else:
            raise UsageError(f"unknown strategy {token!r}")
    return out


def synthetic_series(model, years: int, seed: int, first_year: int = 1925) -> bt.ReturnSeries:
    """One simulated monthly GP path starting in December of ``first_year``."""
    n = 12 * years + 2
    path = simulate_gp(model, TimeGrid(0.0, n / 12.0, n), 1, seed).values[0]
    start = np.datetime64(f"{first_year:04d}-{bt.START_MONTH:02d}", "M")
    return bt.ReturnSeries(start + np.arange(n + 1), path)


def cmd_backtest(cfg) -> int:
    specs = parse_strategies(cfg.get("strategy"), cfg)
    if cfg.get("data"):
        series = bt.load_return_series(cfg["data"], cfg["format"])
    elif int(cfg["synthetic"]) > 0:
        series = synthetic_series(model_of(cfg), int(cfg["synthetic"]), int(cfg["seed"]))
    else:
        raise UsageError("backtest needs --data or --synthetic YEARS")
    d0 = series.dates[0].astype(object)
    # the first table start is December of the first year that has one
    start = int(cfg.get("start") or (d0.year if d0.month == bt.START_MONTH else d0.year + 1))
    end = int(cfg.get("end") or series.dates[-1].astype(object).year)
    ends = list(range(start + 10, end + 1, 10))
    if not ends:
        raise UsageError("backtest window shorter than one decade")
    starts = list(range(start, ends[-1], 10))
    tables = bt.total_return_table(series, specs, starts, ends, anchor=cfg["anchor"])
    out = cfg.get("out") or "."
    os.makedirs(out, exist_ok=True)
    labels = list(tables)
    first_rep = tables[labels[0]]
    with open(os.path.join(out, "wealth_paths.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date"] + labels)
        for k, d in enumerate(first_rep.dates):
            w.writerow([str(d)] + [g17(tables[name].wealth_path[k]) for name in labels])
    human = []
    for name, rep in tables.items():
        safe = "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in name)
        with open(os.path.join(out, f"table_{safe}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["start"] + [str(e) for e in rep.end_years])
            for s, row in zip(rep.start_years, rep.total_return_matrix):
                w.writerow([str(s)] + ["" if math.isnan(x) else g17(x) for x in row])
        with open(os.path.join(out, f"report_{safe}.json"), "w") as fh:
            fh.write(rep.to_json())
        human.append(f"{name}\n" + bt.format_table(rep.total_return_matrix, rep.start_years, rep.end_years))
    with open(os.path.join(out, "tables.txt"), "w") as fh:
        fh.write("\n".join(human))
    return EXIT_OK


HANDLERS = {"calibrate": cmd_calibrate, "simulate": cmd_simulate, "price": cmd_price, "solve": cmd_solve,
            "verify": cmd_verify, "backtest": cmd_backtest}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"longrun: usage error: {exc}\n")
        return EXIT_USAGE
    try:
        cfg = resolve(args)
        return HANDLERS[args.command](cfg)
    except UsageError as exc:
        sys.stderr.write(f"longrun: usage error: {exc}\n")
        return EXIT_USAGE
    except (OSError, DataError) as exc:
        sys.stderr.write(f"longrun: {exc}\n")
        return EXIT_IO
    except (DomainError, StrategyError, UnsupportedMethodError, ValueError) as exc:
        sys.stderr.write(f"longrun: invalid parameters: {exc}\n")
        return EXIT_USAGE
    except LongrunError as exc:
        sys.stderr.write(f"longrun: {exc}\n")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
