"""Monthly-rebalancing backtests against a total-return index used as GP proxy.

Wealth starts at 1. Each month the strategy puts a fraction ``pi`` of wealth
in the index and the rest in the baseline security, which is constant in the
discounted denomination. The optimal strategy holds ``omega = dV*/dv`` units
of the proxy, i.e. ``pi = omega v / W``, capped at the sanity bound.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import DataError, DomainError, ParseError, RangeError, StrategyError
from .models import GpModel, MmmModel, TimeGrid, simulate_gp
from .strategy import WEIGHT_BOUND, Preferences, StrategySpec, ValueFunction, build_value_function

FORMATS = ("shiller_csv", "generic_csv")
MIN_ROWS = 3
START_YEARS = tuple(range(1925, 2006, 10))
END_YEARS = tuple(range(1935, 2016, 10))
# a table cell for (start, end) runs from December of start to January of end
START_MONTH, END_MONTH = 12, 1


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    """Monthly total-return index normalised to 1 at the first date.

    ``baseline`` (nominal denomination only) is the value of the baseline
    security on the same dates, also normalised to 1.
    """

    dates: np.ndarray
    index_values: np.ndarray
    denomination: str = "discounted"
    baseline: Optional[np.ndarray] = None

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[M]")
        values = np.asarray(self.index_values, dtype=float)
        if dates.ndim != 1 or dates.shape != values.shape:
            raise DataError("dates and index values must be 1-d and aligned")
        if dates.size < 2:
            raise DataError("a return series needs at least 2 dates")
        steps = np.diff(dates).astype(int)
        if np.any(steps <= 0):
            raise DataError("dates must be strictly increasing")
        if np.any(steps != 1):
            raise DataError("dates must be consecutive months")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise DataError("index values must be positive and finite")
        if self.denomination not in ("discounted", "nominal"):
            raise DataError(f"unknown denomination {self.denomination!r}")
        base = None
        if self.baseline is not None:
            base = np.asarray(self.baseline, dtype=float)
            if base.shape != values.shape or np.any(base <= 0) or not np.all(np.isfinite(base)):
                raise DataError("baseline must be positive and aligned with the index")
            base = base / base[0]
        elif self.denomination == "nominal":
            raise DataError("nominal denomination needs a baseline series")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "index_values", values / values[0])
        object.__setattr__(self, "baseline", base)

    def __len__(self):
        return self.dates.size

    @property
    def discounted(self) -> np.ndarray:
        """Index in units of the baseline security."""
        return self.index_values if self.baseline is None else self.index_values / self.baseline

    def position(self, date) -> int:
        d = np.datetime64(date, "M")
        k = int((d - self.dates[0]).astype(int))
        if not 0 <= k < self.dates.size:
            raise RangeError(f"{d} lies outside {self.dates[0]}..{self.dates[-1]}")
        return k

    def window(self, start, end) -> "ReturnSeries":
        i, j = self.position(start), self.position(end)
        if j <= i:
            raise RangeError("end must come after start")
        base = None if self.baseline is None else self.baseline[i:j + 1]
        return ReturnSeries(self.dates[i:j + 1], self.index_values[i:j + 1], self.denomination, base)


_SHILLER_DATE = re.compile(r"^(\d{4})\.(\d{1,2})$")
_ISO_DATE = re.compile(r"^(\d{4})-(\d{2})$")


def parse_month(text: str, line: Optional[int] = None) -> np.datetime64:
    """Parse ``YYYY-MM`` or Shiller's fractional ``YYYY.MM`` (``1871.1`` is October)."""
    s = text.strip()
    m = _ISO_DATE.match(s)
    if m is None:
        m = _SHILLER_DATE.match(s)
        if m is not None:
            year, month = int(m.group(1)), int(m.group(2).ljust(2, "0"))
        else:
            raise ParseError(f"malformed date {text!r}", line)
    else:
        year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise ParseError(f"month out of range in {text!r}", line)
    return np.datetime64(f"{year:04d}-{month:02d}", "M")


def _number(text: str, what: str, line: int) -> float:
    if text is None or not text.strip():
        raise ParseError(f"missing {what}", line)
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"malformed {what} {text!r}", line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what}", line)
    return value


def _columns(header, wanted, path):
    lower = [h.strip().lower() for h in header]
    out = {}
    for name in wanted:
        if name.lower() not in lower:
            raise ParseError(f"{path}: header lacks column {name!r}", 1)
        out[name] = lower.index(name.lower())
    return out


def load_return_series(path, format: str = "generic_csv", min_rows: int = MIN_ROWS) -> ReturnSeries:
    """Load a monthly series.

    ``generic_csv`` has columns ``Date, Index`` and an optional ``Baseline``
    (which makes the series nominal). ``shiller_csv`` has ``Date, P, D``;
    the total-return index compounds ``(P_t + D_t / 12) / P_{t-1}``.
    """
    if format not in FORMATS:
        raise DataError(f"unknown format {format!r}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file", 1)
    header, body = rows[0], rows[1:]
    need = ("Date", "P", "D") if format == "shiller_csv" else ("Date", "Index")
    cols = _columns(header, need, path)
    has_base = format == "generic_csv" and "baseline" in [h.strip().lower() for h in header]
    if has_base:
        cols["Baseline"] = [h.strip().lower() for h in header].index("baseline")
    dates, a, b, base = [], [], [], []
    for offset, row in enumerate(body):
        line = offset + 2
        if not any(cell.strip() for cell in row):
            continue
        if len(row) < len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        d = parse_month(row[cols["Date"]], line)
        if dates and d <= dates[-1]:
            raise DataError(f"line {line}: dates not strictly increasing at {d}")
        if dates and d != dates[-1] + 1:
            raise DataError(f"line {line}: gap in monthly dates before {d}")
        dates.append(d)
        if format == "shiller_csv":
            p, dv = _number(row[cols["P"]], "price", line), _number(row[cols["D"]], "dividend", line)
            if p <= 0 or dv < 0:
                raise ParseError("price must be positive and dividend non-negative", line)
            a.append(p)
            b.append(dv)
        else:
            x = _number(row[cols["Index"]], "index value", line)
            if x <= 0:
                raise ParseError("index value must be positive", line)
            a.append(x)
            if has_base:
                y = _number(row[cols["Baseline"]], "baseline value", line)
                if y <= 0:
                    raise ParseError("baseline value must be positive", line)
                base.append(y)
    if len(dates) < max(2, min_rows):
        raise DataError(f"{path}: need at least {max(2, min_rows)} rows, got {len(dates)}")
    if format == "shiller_csv":
        p, dv = np.array(a), np.array(b)
        gross = (p[1:] + dv[1:] / 12.0) / p[:-1]
        values = np.concatenate(([1.0], np.cumprod(gross)))
        return ReturnSeries(np.array(dates), values)
    if has_base:
        return ReturnSeries(np.array(dates), np.array(a), "nominal", np.array(base))
    return ReturnSeries(np.array(dates), np.array(a))


def write_return_series(series: ReturnSeries, path) -> None:
    """Write ``generic_csv`` at 17 significant digits (reloads identically)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if series.baseline is None:
            w.writerow(["Date", "Index"])
            for d, x in zip(series.dates, series.index_values):
                w.writerow([str(d), f"{x:.17g}"])
        else:
            w.writerow(["Date", "Index", "Baseline"])
            for d, x, y in zip(series.dates, series.index_values, series.baseline):
                w.writerow([str(d), f"{x:.17g}", f"{y:.17g}"])


# -- engine --------------------------------------------------------------------

def strategy_label(spec: StrategySpec) -> str:
    if spec.kind == "fixed_mix":
        return f"fixed_mix({spec.weight:g})"
    if spec.kind == "mean_variance":
        return f"mean_variance({spec.mu:g},{spec.sigma:g},{spec.risk_aversion:g})"
    return spec.kind


def optimal_value_function(spec: StrategySpec, horizon: float) -> ValueFunction:
    """Terminal-wealth CRRA value function for an ``optimal_two_fund`` spec."""
    if spec.kind != "optimal_two_fund":
        raise StrategyError("only optimal_two_fund specs carry a value function")
    if spec.model is None:
        raise StrategyError("optimal_two_fund needs a GP model")
    return build_value_function(spec.preferences(horizon), spec.model, 1.0)


def run_paths(proxy: np.ndarray, spec: StrategySpec, vf: Optional[ValueFunction] = None,
              baseline: Optional[np.ndarray] = None, dt: float = 1.0 / 12.0, t0: float = 0.0,
              v0: float = 1.0) -> tuple:
    """Wealth and risky weights for many monthly paths at once.

    ``proxy`` holds discounted index levels (paths x dates, first column 1);
    ``baseline`` holds the baseline security value (or ``None`` when
    discounted). The value function sees the GP at ``v0 * proxy`` on the
    clock ``t0 + k dt``. Returns ``(wealth, weights)``; weights are set at
    the start of each month and have one column fewer than wealth.
    """
    proxy = np.atleast_2d(np.asarray(proxy, dtype=float))
    n, m = proxy.shape
    base = np.ones_like(proxy) if baseline is None else np.atleast_2d(np.asarray(baseline, dtype=float))
    nominal = proxy * base
    gross = nominal[:, 1:] / nominal[:, :-1]
    base_gross = base[:, 1:] / base[:, :-1]
    wealth = np.empty((n, m))
    wealth[:, 0] = 1.0
    weights = np.empty((n, m - 1))
    fixed = spec.risky_weight
    if fixed is None:
        if vf is None:
            raise StrategyError("optimal_two_fund needs a value function")
        if abs(t0 + (m - 1) * dt - vf.horizon) > 1e-9:
            raise DomainError("value-function horizon must equal the end of the backtest")
        # wealth is per unit of V* at the start
        scale = 1.0 / vf(t0, v0)
    for k in range(m - 1):
        if fixed is None:
            v = v0 * proxy[:, k]
            pi = scale * vf.dv(t0 + k * dt, v) * v / wealth[:, k]
            pi = np.clip(pi, -WEIGHT_BOUND, WEIGHT_BOUND)
        else:
            pi = fixed
        weights[:, k] = pi
        wealth[:, k + 1] = wealth[:, k] * (pi * gross[:, k] + (1.0 - pi) * base_gross[:, k])
    return wealth, weights


@dataclass(frozen=True, eq=False)
class BacktestReport:
    strategy: StrategySpec
    dates: np.ndarray
    wealth_path: np.ndarray
    weights: np.ndarray
    total_return_matrix: Optional[np.ndarray] = None
    start_years: Sequence[int] = field(default=())
    end_years: Sequence[int] = field(default=())

    @property
    def label(self) -> str:
        return strategy_label(self.strategy)

    @property
    def total_return(self) -> float:
        return float(self.wealth_path[-1] / self.wealth_path[0])

    def to_json(self) -> str:
        matrix = None
        if self.total_return_matrix is not None:
            matrix = [[None if math.isnan(x) else float(x) for x in row] for row in self.total_return_matrix]
        doc = {
            "strategy": self.label,
            "params": self.strategy.params(),
            "start_years": list(self.start_years),
            "end_years": list(self.end_years),
            "matrix": matrix,
            "dates": [str(d) for d in self.dates],
            "wealth_path": [float(x) for x in self.wealth_path],
        }
        return json.dumps(doc, indent=1, sort_keys=False) + "\n"


ANCHORS = ("window", "series")


def _anchor(series: ReturnSeries, start_pos: int, anchor: str):
    if anchor == "window":
        return 0.0, 1.0
    if anchor == "series":
        return start_pos / 12.0, float(series.discounted[start_pos])
    raise DomainError(f"unknown anchor {anchor!r}")


def run_strategy(series: ReturnSeries, spec: StrategySpec, vf: Optional[ValueFunction] = None,
                 start=None, end=None, anchor: str = "window") -> BacktestReport:
    """Backtest one strategy over ``[start, end]`` (inclusive monthly dates).

    ``anchor`` fixes the GP coordinates the value function sees: ``window``
    starts the model clock at ``start`` with the proxy at 1, ``series``
    keeps the clock and level of the whole series (as when the model was
    calibrated on it). Without ``vf`` the optimal strategy builds one whose
    horizon is ``end`` on that clock.
    """
    start = series.dates[0] if start is None else start
    end = series.dates[-1] if end is None else end
    win = series.window(start, end)
    t0, v0 = _anchor(series, series.position(start), anchor)
    proxy = win.discounted / win.discounted[0]
    if spec.kind == "optimal_two_fund" and vf is None:
        vf = optimal_value_function(spec, t0 + (len(win) - 1) / 12.0)
    wealth, weights = run_paths(proxy, spec, vf, win.baseline, t0=t0, v0=v0)
    if not np.all(wealth > 0):
        raise StrategyError(f"{strategy_label(spec)} wealth turned non-positive")
    return BacktestReport(spec, win.dates, wealth[0], weights[0])


def table_dates(start_year: int, end_year: int):
    return (np.datetime64(f"{start_year:04d}-{START_MONTH:02d}", "M"),
            np.datetime64(f"{end_year:04d}-{END_MONTH:02d}", "M"))


def total_return_table(series: ReturnSeries, specs: Sequence[StrategySpec],
                       start_years: Sequence[int] = START_YEARS, end_years: Sequence[int] = END_YEARS,
                       vf: Optional[ValueFunction] = None, anchor: str = "window") -> Dict[str, BacktestReport]:
    """Terminal wealth per unit initial wealth for every ``start < end`` pair.

    Each strategy runs once from December of the first start year to January
    of the last end year; cell ``(s, e)`` is the wealth ratio between the two
    dates. The optimal strategy's horizon is therefore the full run. Cells
    with ``end <= start`` are NaN.
    """
    first, last = table_dates(min(start_years), max(end_years))
    out = {}
    for spec in specs:
        rep = run_strategy(series, spec, vf if spec.kind == "optimal_two_fund" else None, first, last, anchor)
        mat = np.full((len(start_years), len(end_years)), np.nan)
        for i, s in enumerate(start_years):
            for j, e in enumerate(end_years):
                if e <= s:
                    continue
                a, b = table_dates(s, e)
                ia, ib = int((a - first).astype(int)), int((b - first).astype(int))
                mat[i, j] = rep.wealth_path[ib] / rep.wealth_path[ia]
        out[rep.label] = BacktestReport(spec, rep.dates, rep.wealth_path, rep.weights, mat,
                                        tuple(start_years), tuple(end_years))
    return out


STANDARD_STRATEGIES = (
    StrategySpec.optimal_two_fund(MmmModel(0.1828, 0.0520), gamma=3.0),
    StrategySpec.gp_all_in(),
    StrategySpec.fixed_mix(0.6),
    StrategySpec.mean_variance(0.06, 0.20, 6.0),
    StrategySpec.risk_free(),
)


def format_table(matrix: np.ndarray, start_years, end_years) -> str:
    """Human-readable table at two decimals; blank cells below the diagonal."""
    lines = ["start " + "".join(f"{e:>10d}" for e in end_years)]
    for s, row in zip(start_years, matrix):
        cells = "".join(" " * 10 if math.isnan(x) else f"{x:10.2f}" for x in row)
        lines.append(f"{s:<6d}" + cells)
    return "\n".join(lines) + "\n"


# -- synthetic ensembles ---------------------------------------------------------

def simulate_ensemble(model: GpModel, specs: Sequence[StrategySpec], years: int = 90, n_paths: int = 500,
                      seed: int = 20180101) -> Dict[str, np.ndarray]:
    """Terminal log wealth of each strategy on simulated monthly GP paths."""
    grid = TimeGrid(0.0, float(years), 12 * years)
    paths = simulate_gp(model, grid, n_paths, seed).values
    out = {}
    for spec in specs:
        vf = optimal_value_function(spec, float(years)) if spec.kind == "optimal_two_fund" else None
        wealth, _ = run_paths(paths, spec, vf)
        out[strategy_label(spec)] = np.log(wealth[:, -1])
    return out
