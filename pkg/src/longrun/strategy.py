"""Optimal value functions, budget multipliers, fund holdings and aggregators.

For CRRA preferences the optimal plan pays

    C_s = (exp(delta s) lam)^(-1/gamma) V_s^(1/gamma)
    V_T = eps^(1/gamma) (exp(delta T) lam)^(-1/gamma) V_T^(1/gamma)

and the optimal wealth ``V*(t, v)`` is the fair price of the remaining plan.
The multiplier ``lam`` makes the time-0 price equal the initial wealth
``V0``. The investor holds ``dV*/dv`` units of the GP and keeps the rest in
the baseline security.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .errors import DomainError, NumericalDerivativeError, SolverError, StrategyError
from .models import ConstantMprModel, GpModel, MmmModel, PathSet
from .pricing import (
    DEFAULT_NODES,
    ConsumptionStream,
    PowerPayout,
    exponent_from_gamma,
    fair_price,
    fair_price_dv,
    gp_log_moment,
)

LAMBDA_BRACKET = (1e-12, 1e12)
WEIGHT_BOUND = 5.0


@dataclass(frozen=True)
class Preferences:
    """Investor preferences.

    ``chi = 0`` is the terminal-wealth problem (needs ``epsilon > 0``);
    ``chi = 1`` adds consumption. ``psi`` is the elasticity of intertemporal
    substitution and only matters for the Epstein-Zin helpers.
    """

    gamma: float
    delta: float = 0.0
    epsilon: float = 1.0
    chi: int = 0
    horizon: float = 1.0
    psi: Optional[float] = None

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise DomainError("gamma must be positive and finite")
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise DomainError("delta must be non-negative")
        if not self.epsilon >= 0:
            raise DomainError("epsilon must be non-negative")
        if self.chi not in (0, 1):
            raise DomainError("chi must be 0 or 1")
        if self.chi == 0 and self.epsilon == 0:
            raise DomainError("chi = 0 with epsilon = 0 has no objective")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if self.psi is not None and not self.psi > 0:
            raise DomainError("psi must be positive")

    @property
    def exponent(self) -> float:
        """Power ``1/gamma - 1`` of the GP moments that price the plan."""
        return exponent_from_gamma(self.gamma)


def plan_payoff(prefs: Preferences, lam: float):
    """The CRRA optimal plan for multiplier ``lam`` as a priceable payoff."""
    g, T = prefs.gamma, prefs.horizon
    rho = prefs.delta / g
    level = lam ** (-1.0 / g)
    bequest = prefs.epsilon ** (1.0 / g)
    if prefs.chi == 0:
        return PowerPayout(prefs.exponent, T, scale=level * bequest * math.exp(-rho * T))
    return ConsumptionStream(prefs.exponent, rho, T, bequest=bequest, scale=level)


def optimal_plan_crra(prefs: Preferences, lam: float, gp_terminal, s, gp_at_s):
    """Optimal terminal wealth and consumption rate for given GP values.

    Returns ``(terminal_wealth, consumption_rate)``; the rate is zero when
    ``chi = 0``.
    """
    if not lam > 0:
        raise DomainError("lam must be positive")
    g, d = prefs.gamma, prefs.delta
    terminal = prefs.epsilon ** (1.0 / g) * (math.exp(d * prefs.horizon) * lam) ** (-1.0 / g) \
        * np.asarray(gp_terminal, dtype=float) ** (1.0 / g)
    rate = prefs.chi * (np.exp(d * np.asarray(s, dtype=float)) * lam) ** (-1.0 / g) \
        * np.asarray(gp_at_s, dtype=float) ** (1.0 / g)
    return terminal, rate


def solve_budget_lambda(prefs: Preferences, model: GpModel, V0: float, tol: float = 1e-12,
                        method: str = "closed_form", nodes: int = DEFAULT_NODES) -> float:
    """Multiplier ``lam`` whose optimal plan has time-0 fair price ``V0``.

    The plan price falls strictly in ``lam``; the root is bracketed in
    ``[1e-12, 1e12]`` and found by Brent's method on ``log(lam)`` to
    ``tol`` in log terms.
    """
    if not V0 > 0:
        raise DomainError("V0 must be positive")

    def excess(log_lam):
        return fair_price(model, 0.0, 1.0, plan_payoff(prefs, math.exp(log_lam)), method, nodes) - V0

    lo, hi = (math.log(b) for b in LAMBDA_BRACKET)
    f_lo, f_hi = excess(lo), excess(hi)
    if not (f_lo >= 0 >= f_hi):
        raise SolverError(f"cannot bracket the budget multiplier in {LAMBDA_BRACKET}")
    return math.exp(optimize.brentq(excess, lo, hi, xtol=tol))


def central_difference(f, x, h):
    """Central difference with one Richardson extrapolation step."""
    d1 = (f(x + h) - f(x - h)) / (2 * h)
    h2 = h / 2
    d2 = (f(x + h2) - f(x - h2)) / (2 * h2)
    out = (4 * d2 - d1) / 3
    if not np.all(np.isfinite(out)):
        raise NumericalDerivativeError("non-finite finite-difference derivative")
    return out


def _fd_step(v):
    v = np.asarray(v, dtype=float)
    # never step across v = 0
    return np.minimum(np.maximum(1e-5, 1e-5 * v), 0.5 * v)


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Optimal wealth surface ``V*(t, v)`` for CRRA preferences.

    Evaluation uses the ratio form ``V0 * P(t, v) / P(0, 1)`` with ``P`` the
    fair price of the unit-multiplier plan, so ``V*(0, 1) = V0`` up to
    rounding. ``lam`` is the budget multiplier from :func:`solve_budget_lambda`.
    """

    prefs: Preferences
    model: GpModel
    V0: float
    lam: float
    method: str = "closed_form"
    nodes: int = DEFAULT_NODES
    _norm: float = field(init=False, repr=False)

    # utility-gradient process; identically one for time-additive utility
    D = 1.0

    def __post_init__(self):
        object.__setattr__(self, "_norm", fair_price(self.model, 0.0, 1.0, self._unit, self.method, self.nodes))

    @property
    def _unit(self):
        return plan_payoff(self.prefs, 1.0)

    @property
    def horizon(self) -> float:
        return self.prefs.horizon

    def __call__(self, t, v):
        return self.V0 * fair_price(self.model, t, v, self._unit, self.method, self.nodes) / self._norm

    def benchmarked(self, t, v):
        return self(t, v) / np.asarray(v, dtype=float)

    def dv(self, t, v):
        """Analytic ``dV*/dv``."""
        return self.V0 * fair_price_dv(self.model, t, v, self._unit, self.method, self.nodes) / self._norm

    def dv_numeric(self, t, v):
        """Richardson-extrapolated central difference of ``V*`` in ``v``."""
        return central_difference(lambda x: self(t, x), np.asarray(v, dtype=float), _fd_step(v))

    def consumption(self, t, v):
        """Optimal consumption rate ``C*(t, v)``."""
        _, rate = optimal_plan_crra(self.prefs, self.lam, 1.0, t, v)
        return rate

    def terminal_wealth(self, v):
        terminal, _ = optimal_plan_crra(self.prefs, self.lam, v, 0.0, 1.0)
        return terminal


def build_value_function(prefs: Preferences, model: GpModel, V0: float = 1.0, method: str = "closed_form",
                         tol: float = 1e-12, nodes: int = DEFAULT_NODES) -> ValueFunction:
    lam = solve_budget_lambda(prefs, model, V0, tol, method, nodes)
    return ValueFunction(prefs, model, V0, lam, method, nodes)


def value_terminal_crra(prefs: Preferences, model: GpModel, V0: float, t, v, method: str = "closed_form"):
    """``V*(t, v) = V0 v E[V_T^p | V_t = v] / E[V_T^p | V_0 = 1]`` (``chi = 0``)."""
    if prefs.chi != 0:
        raise DomainError("value_terminal_crra needs chi = 0")
    payoff = PowerPayout(prefs.exponent, prefs.horizon)
    return V0 * fair_price(model, t, v, payoff, method) / fair_price(model, 0.0, 1.0, payoff, method)


def value_consumption_crra(prefs: Preferences, model: GpModel, V0: float, t, v, method: str = "closed_form",
                           nodes: int = DEFAULT_NODES):
    """Optimal wealth for the consumption-savings problem (``chi = 1``)."""
    if prefs.chi != 1:
        raise DomainError("value_consumption_crra needs chi = 1")
    unit = plan_payoff(prefs, 1.0)
    return V0 * fair_price(model, t, v, unit, method, nodes) / fair_price(model, 0.0, 1.0, unit, method, nodes)


def two_fund_holdings(vf: ValueFunction, t, v, derivative: str = "analytic"):
    """Units of the GP and value held in the baseline security.

    Returns ``(units_gp, riskfree_value)`` with
    ``units_gp * v + riskfree_value = V*(t, v)``.
    """
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr <= 0):
        raise DomainError("v must be positive")
    if derivative == "analytic" and vf.method != "monte_carlo":
        units = vf.dv(t, v)
    else:
        units = vf.dv_numeric(t, v)
    units = np.asarray(units, dtype=float)
    if not np.all(np.isfinite(units)):
        raise NumericalDerivativeError("non-finite holdings")
    riskfree = vf(t, v) - units * v_arr
    if units.ndim == 0:
        return float(units), float(riskfree)
    return units, riskfree


def multi_fund_holdings(value_surface: Callable, t, m):
    """Units ``dV*/dm_i`` of each fund, by central differences per coordinate."""
    m = np.asarray(m, dtype=float).ravel()
    out = np.empty_like(m)
    for i in range(m.size):
        h = max(1e-5, 1e-5 * abs(m[i]))

        def along(x, i=i):
            point = m.copy()
            point[i] = x
            return value_surface(t, point)

        out[i] = central_difference(along, m[i], h)
    return out


def lifetime_utility(vf: ValueFunction, t, v):
    """Expected lifetime utility ``J(t, v)`` along the optimal CRRA plan.

    Uses ``f(c, s) = exp(-delta s) u(c)`` and ``B(x) = exp(-delta T) u(x)``
    with CRRA ``u``. For ``gamma != 1`` every term is a GP power moment; for
    ``gamma = 1`` the log moment enters.
    """
    prefs, lam = vf.prefs, vf.lam
    g, d, eps, T = prefs.gamma, prefs.delta, prefs.epsilon, prefs.horizon
    t, v = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(v, dtype=float))
    if g != 1:
        p = prefs.exponent
        level = lam ** (-p) / (1.0 - g)
        bench = fair_price(vf.model, t, v, plan_payoff(prefs, 1.0), vf.method, vf.nodes) / v
        return level * bench
    span = T - t
    frac = np.linspace(0.0, 1.0, vf.nodes + 1)
    terminal = 0.0
    if eps > 0:
        terminal = eps * math.exp(-d * T) * (math.log(eps) - d * T - math.log(lam)
                                            + gp_log_moment(vf.model, t, v, np.full_like(t, T)))
    if prefs.chi == 0:
        return terminal
    from scipy import integrate
    s = t[..., None] + span[..., None] * frac
    f = np.exp(-d * s) * (-d * s - math.log(lam) + gp_log_moment(vf.model, t[..., None], v[..., None], s))
    return integrate.simpson(f, dx=1.0, axis=-1) * span / vf.nodes + terminal


# -- discrete hedging ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HedgeResult:
    wealth: np.ndarray
    target: np.ndarray

    @property
    def relative_error(self):
        return self.wealth / self.target - 1.0

    @property
    def rms_relative_error(self) -> float:
        return float(np.sqrt(np.mean(self.relative_error**2)))


def hedge_two_fund(vf: ValueFunction, paths: PathSet) -> HedgeResult:
    """Self-financing discrete rebalancing into ``dV*/dv`` units of the GP.

    Starts from ``V*(t0, V_t0)``; between dates the baseline security earns
    nothing (discounted units) and consumption is withdrawn at the
    start-of-step rate. The target is the optimal terminal payout.
    """
    times = paths.times
    if abs(times[-1] - vf.horizon) > 1e-12:
        raise DomainError("path grid must end at the value-function horizon")
    gp = paths.values
    wealth = vf(times[0], gp[:, 0])
    for j in range(times.size - 1):
        units = vf.dv(times[j], gp[:, j])
        dt = times[j + 1] - times[j]
        wealth = wealth + units * (gp[:, j + 1] - gp[:, j]) - vf.consumption(times[j], gp[:, j]) * dt
    return HedgeResult(wealth, vf.terminal_wealth(gp[:, -1]))


# -- Epstein-Zin aggregator ---------------------------------------------------

def _ez_inputs(c, l, prefs):
    g, psi = prefs.gamma, prefs.psi
    if psi is None:
        raise DomainError("Epstein-Zin helpers need prefs.psi")
    if g == 1:
        raise DomainError("Epstein-Zin aggregator needs gamma != 1")
    c = np.asarray(c, dtype=float)
    L = (1.0 - g) * np.asarray(l, dtype=float)
    if np.any(L <= 0):
        raise DomainError("continuation utility must have the sign of 1 - gamma")
    if np.any(c <= 0):
        raise DomainError("consumption must be positive")
    return c, L, g, psi, prefs.delta


def ez_aggregator(c, l, prefs: Preferences):
    """Normalised Epstein-Zin aggregator ``f(c, l)``."""
    c, L, g, psi, d = _ez_inputs(c, l, prefs)
    l = L / (1.0 - g)
    if psi == 1:
        return d * (1.0 - g) * l * (np.log(c) - np.log(L) / (1.0 - g))
    a = 1.0 - 1.0 / psi
    return d * (1.0 - g) / a * l * ((c / L ** (1.0 / (1.0 - g))) ** a - 1.0)


def ez_aggregator_dc(c, l, prefs: Preferences):
    """``df/dc = delta ((1 - gamma) l)^((1/psi - gamma)/(1 - gamma)) c^(-1/psi)``."""
    c, L, g, psi, d = _ez_inputs(c, l, prefs)
    return d * L ** ((1.0 / psi - g) / (1.0 - g)) * c ** (-1.0 / psi)


def ez_aggregator_dl(c, l, prefs: Preferences):
    """``df/dl``; equals ``-delta`` when ``psi = 1/gamma``."""
    c, L, g, psi, d = _ez_inputs(c, l, prefs)
    if psi == 1:
        return d * (1.0 - g) * np.log(c) - d * np.log(L) - d
    a = 1.0 - 1.0 / psi
    A = d * (1.0 - g) / a
    return A * (c**a * (1.0 - a / (1.0 - g)) * L ** (-a / (1.0 - g)) - 1.0)


def ez_inverse_dc(x, l, prefs: Preferences):
    """Inverse marginal aggregator: the ``c`` with ``df/dc(c, l) = x``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("marginal utility must be positive")
    _, L, g, psi, d = _ez_inputs(1.0, l, prefs)
    return d**psi * L ** ((1.0 - g * psi) / (1.0 - g)) * x ** (-psi)


def ez_optimal_consumption(lam, D, gp_value, J, prefs: Preferences):
    """Candidate optimal consumption ``f'^-1(lam / (D V), J)``."""
    return ez_inverse_dc(lam / (np.asarray(D, dtype=float) * np.asarray(gp_value, dtype=float)), J, prefs)


# -- strategy specifications ----------------------------------------------------

KINDS = ("optimal_two_fund", "gp_all_in", "fixed_mix", "mean_variance", "risk_free")


@dataclass(frozen=True)
class StrategySpec:
    """Rebalancing rule for the backtester.

    Fixed-weight kinds expose :attr:`risky_weight`. ``optimal_two_fund``
    carries the GP model and CRRA parameters of its value function.
    """

    kind: str
    weight: Optional[float] = None
    mu: Optional[float] = None
    sigma: Optional[float] = None
    risk_aversion: Optional[float] = None
    model: Optional[GpModel] = None
    gamma: Optional[float] = None
    delta: float = 0.0
    epsilon: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise StrategyError(f"unknown strategy kind {self.kind!r}")
        if self.kind == "fixed_mix":
            if self.weight is None or not abs(self.weight) <= WEIGHT_BOUND:
                raise StrategyError(f"fixed_mix weight must lie in [-{WEIGHT_BOUND}, {WEIGHT_BOUND}]")
        if self.kind == "mean_variance":
            if None in (self.mu, self.sigma, self.risk_aversion) or self.sigma <= 0 or self.risk_aversion <= 0:
                raise StrategyError("mean_variance needs mu, sigma > 0 and risk_aversion > 0")
            if not abs(self.risky_weight) <= WEIGHT_BOUND:
                raise StrategyError("mean_variance weight outside sanity bound")
        if self.kind == "optimal_two_fund" and self.gamma is None:
            raise StrategyError("optimal_two_fund needs gamma")

    @classmethod
    def fixed_mix(cls, weight):
        return cls("fixed_mix", weight=weight)

    @classmethod
    def mean_variance(cls, mu, sigma, risk_aversion):
        return cls("mean_variance", mu=mu, sigma=sigma, risk_aversion=risk_aversion)

    @classmethod
    def gp_all_in(cls):
        return cls("gp_all_in")

    @classmethod
    def risk_free(cls):
        return cls("risk_free")

    @classmethod
    def optimal_two_fund(cls, model=None, gamma=3.0, delta=0.0, epsilon=1.0):
        return cls("optimal_two_fund", model=model, gamma=gamma, delta=delta, epsilon=epsilon)

    @property
    def risky_weight(self) -> Optional[float]:
        """Constant risky weight, or ``None`` for the optimal strategy."""
        if self.kind == "fixed_mix":
            return float(self.weight)
        if self.kind == "mean_variance":
            return self.mu / (self.sigma**2 * self.risk_aversion)
        if self.kind == "gp_all_in":
            return 1.0
        if self.kind == "risk_free":
            return 0.0
        return None

    def preferences(self, horizon: float) -> Preferences:
        return Preferences(self.gamma, self.delta, self.epsilon, chi=0, horizon=horizon)

    def params(self) -> dict:
        out = {"kind": self.kind}
        for name in ("weight", "mu", "sigma", "risk_aversion", "gamma"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.kind == "optimal_two_fund":
            out["delta"], out["epsilon"] = self.delta, self.epsilon
            if isinstance(self.model, MmmModel):
                out.update(model="mmm", alpha0=self.model.alpha0, eta=self.model.eta)
            elif isinstance(self.model, ConstantMprModel):
                out.update(model="bs", theta=self.model.theta)
        return out

    def to_kv(self) -> str:
        return "".join(f"{k} = {v!r}\n" if not isinstance(v, str) else f"{k} = {v}\n"
                       for k, v in self.params().items())

    @classmethod
    def from_kv(cls, text_or_mapping) -> "StrategySpec":
        from .models import model_from_kv, parse_kv
        kv = parse_kv(text_or_mapping) if isinstance(text_or_mapping, str) else dict(text_or_mapping)
        kind = kv.get("kind")
        if kind is None:
            raise StrategyError("strategy text needs a 'kind' entry")
        floats = {k: float(kv[k]) for k in ("weight", "mu", "sigma", "risk_aversion", "gamma", "delta", "epsilon")
                  if k in kv}
        model = model_from_kv(kv) if ("alpha0" in kv or "theta" in kv) else None
        return cls(kind, model=model, **floats)
