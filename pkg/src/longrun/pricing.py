"""Benchmarked values, real-world (minimum) pricing and GP power moments.

The central quantity is the conditional power moment
``E[(V_s)^p | V_t = v]`` of the discounted GP, with ``p = 1/gamma - 1`` for a
CRRA investor with risk aversion ``gamma``. Three evaluation routes exist:

``closed_form``
    Lognormal formula for constant MPR. For the MMM, the Kummer form
    ``(2 tau)^p Gamma(2 + p) 1F1(-p; 2; -v / (2 tau))`` with
    ``tau = phi(s) - phi(t)``, plus the exact identities at ``p = 0`` and
    ``p = 1``.
``series``
    The Poisson-weighted Gamma series for the MMM, summed in log space.
``monte_carlo``
    Sample mean over exact transitions; see :func:`gp_power_moment_mc` for
    the standard error.

For the MMM the analytic routes are restricted to ``gamma >= 1`` (``p`` in
``[-1, 0]``) and ``gamma = 1/2`` (``p = 1``); other exponents require
``monte_carlo``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import integrate, special

from .errors import (
    ConvergenceError,
    DivergenceError,
    DomainError,
    InsufficientSampleError,
    UnsupportedMethodError,
)
from .models import ConstantMprModel, GpModel, MmmModel, mmm_phi, sample_gp_transition

METHODS = ("closed_form", "series", "monte_carlo")
DEFAULT_TOL = 1e-12
MAX_SERIES_TERMS = 10_000
DEFAULT_NODES = 256
DEFAULT_SEED = 20_180_101


def exponent_from_gamma(gamma: float) -> float:
    """Power ``1/gamma - 1``; ``gamma = inf`` maps to ``-1``."""
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    return -1.0 if math.isinf(gamma) else 1.0 / gamma - 1.0


@dataclass(frozen=True)
class PowerMomentQuery:
    """``E[(V_s)^p | V_t = v]`` for a GP model."""

    model: GpModel
    p: float
    t: float
    v: float
    s: float

    def __post_init__(self):
        if not (0 <= self.t <= self.s):
            raise DomainError("PowerMomentQuery requires 0 <= t <= s")
        if not self.v > 0:
            raise DomainError("PowerMomentQuery requires v > 0")

    @classmethod
    def from_gamma(cls, model, gamma, t, v, s):
        return cls(model, exponent_from_gamma(gamma), t, v, s)


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    standard_error: float
    n_paths: int


def _check_method(model: GpModel, p: float, method: str) -> None:
    if method not in METHODS:
        raise UnsupportedMethodError(f"unknown method {method!r}")
    if isinstance(model, MmmModel):
        if p <= -2:
            raise DivergenceError(f"E[V^p] is infinite for the MMM when p <= -2 (p={p})")
        if method != "monte_carlo" and not (-1 <= p <= 0 or p == 1):
            raise UnsupportedMethodError(
                f"{method} is not available for the MMM with p={p}; use monte_carlo")
    elif method == "series":
        raise UnsupportedMethodError("series is only defined for the MMM")


def moment_growth_rate(model: GpModel, p: float):
    """Rate ``c`` when ``E[V_s^p | V_t = v] = v^p exp(c (s - t))``, else ``None``."""
    if p == 0:
        return 0.0
    if isinstance(model, ConstantMprModel):
        return 0.5 * model.theta**2 * p * (1.0 + p)
    return None


# -- Gamma series ----------------------------------------------------------

def _poisson_mixture(y, log_coef, tol=DEFAULT_TOL, max_terms=MAX_SERIES_TERMS):
    """``sum_k exp(-y) y^k / k! * c_k`` with ``log c_k = log_coef(k)``.

    Terms below ``y - 12 sqrt(y)`` are negligible and skipped. Summation then
    stops at the first term that is smaller than its predecessor and
    contributes less than ``tol / (1 + sqrt(y))`` relative to the partial sum. Rows are
    processed in chunks of similar ``y`` to bound memory.
    """
    y = np.asarray(y, dtype=float)
    flat = y.ravel()
    out = np.empty_like(flat)
    if flat.size == 0:
        return out.reshape(y.shape)
    if np.any(flat <= 0):
        raise DomainError("series argument must be positive")
    order = np.argsort(flat, kind="stable")
    start = 0
    while start < flat.size:
        ymax = float(flat[order[min(flat.size, start + 64) - 1]])
        n = int(12.0 * math.sqrt(ymax) + 64) * 2
        rows = max(64, _CELL_BUDGET // n)
        idx = order[start:start + rows]
        out[idx] = _mixture_rows(flat[idx], log_coef, tol, max_terms)
        start += rows
    return out.reshape(y.shape)


_CELL_BUDGET = 1 << 21


def _mixture_rows(y, log_coef, tol, max_terms):
    k0 = np.maximum(0.0, np.floor(y - 12.0 * np.sqrt(y) - 10.0))[:, None]
    span = float(np.max(y - k0[:, 0]))
    n = min(max_terms, int(span + 12.0 * math.sqrt(float(y.max())) + 64))
    logy = np.log(y)[:, None]
    # the tail past a small decreasing term spans about sqrt(y) terms
    rel = tol / (1.0 + np.sqrt(y))[:, None]
    while True:
        k = k0 + np.arange(n, dtype=float)
        logw = -y[:, None] + k * logy - special.gammaln(k + 1.0) + log_coef(k)
        terms = np.exp(logw)
        csum = np.cumsum(terms, axis=1)
        stop = (terms[:, 1:] < terms[:, :-1]) & (terms[:, 1:] < rel * csum[:, 1:])
        if stop.any(axis=1).all():
            idx = np.argmax(stop, axis=1) + 1
            return csum[np.arange(y.size), idx]
        if n >= max_terms:
            raise ConvergenceError(f"Gamma series did not converge within {max_terms} terms")
        n = min(max_terms, 2 * n)


def gamma_series(p: float, y, tol=DEFAULT_TOL, max_terms=MAX_SERIES_TERMS):
    """``exp(-y) sum_k y^k Gamma(p + 2 + k) / (k! Gamma(k + 2))``."""
    return _poisson_mixture(y, lambda k: special.gammaln(p + 2.0 + k) - special.gammaln(k + 2.0),
                            tol, max_terms)


def _gamma_series_dy(p, y, tol, max_terms=MAX_SERIES_TERMS):
    # d/dy of gamma_series is p * sum_k Pois(k; y) Gamma(p+2+k) / (Gamma(k+2) (k+2))
    if p == 0:
        return np.zeros_like(np.asarray(y, dtype=float))
    s = _poisson_mixture(
        y, lambda k: special.gammaln(p + 2.0 + k) - special.gammaln(k + 2.0) - np.log(k + 2.0),
        tol, max_terms)
    return p * s


# -- moments -----------------------------------------------------------------

def _mmm_tau(model, t, s):
    return np.asarray(mmm_phi(model, s), dtype=float) - np.asarray(mmm_phi(model, t), dtype=float)


def power_moment(model: GpModel, p: float, t, v, s, method: str = "closed_form", tol: float = DEFAULT_TOL):
    """Vectorised analytic ``E[(V_s)^p | V_t = v]`` (``closed_form`` or ``series``)."""
    _check_method(model, p, method)
    if method == "monte_carlo":
        raise UnsupportedMethodError("use gp_power_moment_mc for Monte Carlo estimates")
    t, v, s = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, v, s)))
    if p == 0:
        return np.ones(v.shape)
    c = moment_growth_rate(model, p)
    if c is not None:
        return v**p * np.exp(c * (s - t))
    tau = _mmm_tau(model, t, s)
    if p == 1:
        return v + 4.0 * tau
    out = np.array(v**p, dtype=float)
    live = tau > 0
    if np.any(live):
        tl, vl = tau[live], v[live]
        y = vl / (2.0 * tl)
        if method == "series":
            core = gamma_series(p, y, tol)
        else:
            core = math.gamma(2.0 + p) * special.hyp1f1(-p, 2.0, -y)
        out[live] = (2.0 * tl) ** p * core
    return out


def power_moment_dv(model: GpModel, p: float, t, v, s, method: str = "closed_form", tol: float = DEFAULT_TOL):
    """Vectorised ``d/dv E[(V_s)^p | V_t = v]``."""
    _check_method(model, p, method)
    if method == "monte_carlo":
        raise UnsupportedMethodError("no analytic derivative for monte_carlo")
    t, v, s = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, v, s)))
    if p == 0:
        return np.zeros(v.shape)
    c = moment_growth_rate(model, p)
    if c is not None:
        return p * v ** (p - 1.0) * np.exp(c * (s - t))
    if p == 1:
        return np.ones(v.shape)
    tau = _mmm_tau(model, t, s)
    out = np.array(p * v ** (p - 1.0), dtype=float)
    live = tau > 0
    if np.any(live):
        tl, vl = tau[live], v[live]
        y = vl / (2.0 * tl)
        if method == "series":
            core = _gamma_series_dy(p, y, tol)
        else:
            core = math.gamma(2.0 + p) * 0.5 * p * special.hyp1f1(1.0 - p, 3.0, -y)
        out[live] = (2.0 * tl) ** (p - 1.0) * core
    return out


def gp_power_moment(q: PowerMomentQuery, method: str = "closed_form", tol: float = DEFAULT_TOL,
                    n_paths: int = 100_000, seed: int = DEFAULT_SEED) -> float:
    """Conditional power moment for a single query.

    ``monte_carlo`` returns the sample mean of ``n_paths`` exact draws; use
    :func:`gp_power_moment_mc` for its standard error.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    if method == "monte_carlo":
        return gp_power_moment_mc(q, n_paths, seed).mean
    return float(power_moment(q.model, q.p, q.t, q.v, q.s, method, tol))


def gp_power_moment_mc(q: PowerMomentQuery, n_paths: int = 100_000, seed: int = DEFAULT_SEED) -> MonteCarloEstimate:
    """Monte Carlo estimate of the power moment with its standard error."""
    _check_method(q.model, q.p, "monte_carlo")
    if q.p == 0:
        return MonteCarloEstimate(1.0, 0.0, n_paths)
    draws = sample_gp_transition(q.model, q.t, q.v, q.s, n_paths, seed) ** q.p
    return MonteCarloEstimate(float(draws.mean()), float(draws.std(ddof=1) / math.sqrt(n_paths)), n_paths)


_ASYMPTOTIC_Y = 2e3


def _mean_digamma(y, tol):
    # E[digamma(2 + K)], K ~ Poisson(y); central-moment expansion for large y
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    big = y > _ASYMPTOTIC_Y
    if np.any(~big):
        # digamma(k + 2) > 0 for k >= 0, so logs are safe
        out[~big] = _poisson_mixture(y[~big], lambda k: np.log(special.digamma(k + 2.0)), tol)
    if np.any(big):
        yb = y[big]
        m = yb + 2.0
        # Poisson central moments of orders 2..6
        mu = (yb, yb, 3.0 * yb**2 + yb, 10.0 * yb**2 + yb, 15.0 * yb**3 + 25.0 * yb**2 + yb)
        out[big] = special.digamma(m) + sum(special.polygamma(n, m) * mu[n - 2] / math.factorial(n)
                                            for n in range(2, 7))
    return out


def gp_log_moment(model: GpModel, t, v, s, tol: float = DEFAULT_TOL):
    """``E[ln V_s | V_t = v]``.

    For the MMM this is ``ln(2 tau) + E[digamma(2 + K)]`` with ``K`` Poisson
    of mean ``v / (2 tau)``.
    """
    t, v, s = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, v, s)))
    if isinstance(model, ConstantMprModel):
        return np.log(v) + 0.5 * model.theta**2 * (s - t)
    tau = _mmm_tau(model, t, s)
    out = np.array(np.log(v), dtype=float)
    live = tau > 0
    if np.any(live):
        tl, vl = tau[live], v[live]
        out[live] = np.log(2.0 * tl) + _mean_digamma(vl / (2.0 * tl), tol)
    return out


# -- benchmarking and fair prices ------------------------------------------

def benchmark(value, gp_value):
    """Benchmarked value ``value / gp_value``."""
    g = np.asarray(gp_value, dtype=float)
    if np.any(~(g > 0)):
        raise DomainError("gp_value must be positive")
    out = np.asarray(value, dtype=float) / g
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PowerPayout:
    """Single payment ``scale * (V_T)^(1 + exponent)`` at ``maturity``.

    The benchmarked payoff is ``scale * (V_T)^exponent``; exponent 0 is one
    unit of the GP.
    """

    exponent: float
    maturity: float
    scale: float = 1.0


@dataclass(frozen=True)
class ConsumptionStream:
    """Continuous payment rate ``scale * exp(-rate s) (V_s)^(1 + exponent)`` on ``[t, T]``
    plus a terminal payment ``scale * bequest * exp(-rate T) (V_T)^(1 + exponent)``."""

    exponent: float
    discount_rate: float
    maturity: float
    bequest: float = 0.0
    scale: float = 1.0


Payoff = Union[PowerPayout, ConsumptionStream]


def _stream_integral(model, payoff, t, v, method, nodes, tol, moment):
    p, rho, T = payoff.exponent, payoff.discount_rate, payoff.maturity
    c = moment_growth_rate(model, p)
    span = T - t
    if c is not None:
        k = c - rho
        base = moment(p, t, v, t) * np.exp(-rho * t)
        if k == 0:
            return base * span
        return base * np.expm1(k * span) / k
    frac = np.linspace(0.0, 1.0, nodes + 1)
    s = t[..., None] + span[..., None] * frac
    f = np.exp(-rho * s) * moment(p, t[..., None], v[..., None], s)
    return integrate.simpson(f, dx=1.0, axis=-1) * span / nodes


def _benchmarked(model, t, v, payoff, method, nodes, tol, moment):
    t, v = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(v, dtype=float))
    T = payoff.maturity
    if np.any(t > T):
        raise DomainError("valuation time after maturity")
    if isinstance(payoff, PowerPayout):
        return payoff.scale * moment(payoff.exponent, t, v, np.full_like(t, T))
    if not isinstance(payoff, ConsumptionStream):
        raise DomainError(f"unsupported payoff {payoff!r}")
    terminal = np.exp(-payoff.discount_rate * T) * moment(payoff.exponent, t, v, np.full_like(t, T))
    stream = _stream_integral(model, payoff, t, v, method, nodes, tol, moment)
    return payoff.scale * (stream + payoff.bequest * terminal)


def benchmarked_expectation(model: GpModel, t, v, payoff: Payoff, method="closed_form",
                            nodes=DEFAULT_NODES, tol=DEFAULT_TOL):
    """``E[benchmarked payoff | V_t = v]``, vectorised over ``t`` and ``v``."""
    def moment(p, tt, vv, ss):
        return power_moment(model, p, tt, vv, ss, method, tol)
    return _benchmarked(model, t, v, payoff, method, nodes, tol, moment)


def fair_price(model: GpModel, t, v, payoff: Payoff, method="closed_form", nodes=DEFAULT_NODES, tol=DEFAULT_TOL):
    """Real-world price ``v * E[payoff / V_payment | V_t = v]``.

    Stream integrals are exact when the moment is exponential in time
    (constant MPR, or exponent 0) and use composite Simpson with ``nodes``
    intervals otherwise.
    """
    if nodes < 2 or nodes % 2:
        raise DomainError("nodes must be an even integer >= 2")
    out = np.asarray(v, dtype=float) * benchmarked_expectation(model, t, v, payoff, method, nodes, tol)
    return float(out) if out.ndim == 0 else out


def fair_price_dv(model: GpModel, t, v, payoff: Payoff, method="closed_form", nodes=DEFAULT_NODES, tol=DEFAULT_TOL):
    """``d/dv`` of :func:`fair_price`, from analytic moment derivatives."""
    def dmoment(p, tt, vv, ss):
        return power_moment_dv(model, p, tt, vv, ss, method, tol)
    v_arr = np.asarray(v, dtype=float)
    level = benchmarked_expectation(model, t, v, payoff, method, nodes, tol)
    slope = _benchmarked(model, t, v, payoff, method, nodes, tol, dmoment)
    out = level + v_arr * slope
    return float(out) if out.ndim == 0 else out


# -- martingale diagnostics --------------------------------------------------

CONSISTENT = "consistent-with-martingale"
SUPERMARTINGALE = "strict-supermartingale-signal"
INCONSISTENT = "inconsistent"
MIN_PATHS = 100


@dataclass(frozen=True)
class MartingaleDiagnostic:
    mean_drift: float
    standard_error: float
    n_paths: int
    verdict: str


def martingale_check(benchmarked_paths, threshold: float = 3.0) -> MartingaleDiagnostic:
    """Test whether benchmarked paths are consistent with a martingale.

    The drift is the mean of terminal minus initial value across paths
    (rows). It is compared with ``threshold`` standard errors.
    """
    values = getattr(benchmarked_paths, "values", benchmarked_paths)
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] < MIN_PATHS:
        raise InsufficientSampleError(f"martingale_check needs >= {MIN_PATHS} paths")
    change = values[:, -1] - values[:, 0]
    n = change.size
    mean = float(change.mean())
    se = float(change.std(ddof=1) / math.sqrt(n))
    if abs(mean) <= threshold * se:
        verdict = CONSISTENT
    elif mean < 0:
        verdict = SUPERMARTINGALE
    else:
        verdict = INCONSISTENT
    return MartingaleDiagnostic(mean, se, n, verdict)
