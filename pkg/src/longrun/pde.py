"""Finite-difference checks of value-function surfaces.

A surface ``V(t, v)`` optimal under a GP model must solve

    dV/dt + 1/2 b(t, v)^2 d2V/dv2 + chi C(t, v) = 0

on ``[0, T) x (0, inf)`` with the optimal terminal payout at ``t = T``, where
``b^2`` is the GP's squared diffusion. Derivatives are central differences on
interior grid nodes, so residuals of a smooth solution shrink at second order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, GridError, LongrunError
from .models import GpModel, gp_squared_diffusion

MIN_NODES = 5


@dataclass(frozen=True)
class Grid2D:
    """Rectangular grid in ``(t, v)``; ``v`` must stay strictly positive."""

    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if t.ndim != 1 or v.ndim != 1 or t.size < MIN_NODES or v.size < MIN_NODES:
            raise GridError(f"each axis needs at least {MIN_NODES} nodes")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(v) <= 0):
            raise GridError("grid axes must be strictly increasing")
        if v[0] <= 0:
            raise GridError("v axis must be strictly positive")
        if not np.allclose(np.diff(t), t[1] - t[0]) or not np.allclose(np.diff(v), v[1] - v[0]):
            raise GridError("grid axes must be uniformly spaced")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)

    @classmethod
    def uniform(cls, t0, t1, nt, v0, v1, nv) -> "Grid2D":
        return cls(np.linspace(t0, t1, nt), np.linspace(v0, v1, nv))

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def dv(self) -> float:
        return float(self.v[1] - self.v[0])

    @property
    def mesh(self):
        return np.meshgrid(self.t, self.v, indexing="ij")


@dataclass(frozen=True, eq=False)
class ResidualReport:
    """Interior residuals of the valuation PDE on a grid.

    ``boundary_max_error`` is the relative terminal-condition error along the
    ``v`` nodes, or 0 when no terminal payout is known for the surface.
    """

    max_abs_residual: float
    interior_rms: float
    boundary_max_error: float
    grid: Grid2D
    residual: np.ndarray

    def to_dict(self) -> dict:
        return {"max_abs_residual": self.max_abs_residual, "interior_rms": self.interior_rms,
                "boundary_max_error": self.boundary_max_error,
                "nt": int(self.grid.t.size), "nv": int(self.grid.v.size)}


def _surface(fn: Callable, t, v, name: str):
    try:
        out = np.asarray(fn(t, v), dtype=float)
    except LongrunError as exc:
        raise GridError(f"{name} could not be evaluated on the grid: {exc}") from exc
    if out.shape != t.shape:
        out = np.broadcast_to(out, t.shape)
    if not np.all(np.isfinite(out)):
        raise GridError(f"{name} is not finite on the grid")
    return out


def _squared_diffusion(diffusion, t, v):
    if callable(diffusion):
        return np.asarray(diffusion(t, v), dtype=float)
    return gp_squared_diffusion(diffusion, t, v)


def pde_residual(vf: Callable, consumption: Optional[Callable], diffusion, grid: Grid2D,
                 chi: Optional[int] = None, terminal: Optional[Callable] = None) -> ResidualReport:
    """Residual of the valuation PDE at interior nodes.

    ``vf`` is a :class:`~longrun.strategy.ValueFunction` or any vectorised
    callable of ``(t, v)``. ``diffusion`` is a GP model or a callable giving
    the squared diffusion ``b(t, v)^2``. ``chi`` and ``terminal`` default to
    those of ``vf`` when it is a ValueFunction.
    """
    prefs = getattr(vf, "prefs", None)
    if chi is None:
        chi = prefs.chi if prefs is not None else 0
    if chi not in (0, 1):
        raise DomainError("chi must be 0 or 1")
    if consumption is None:
        consumption = getattr(vf, "consumption", None)
    if chi and consumption is None:
        raise DomainError("chi = 1 needs a consumption rule")
    T, V = grid.mesh
    W = _surface(vf, T, V, "value")
    dt, dv = grid.dt, grid.dv
    Vt = (W[2:, 1:-1] - W[:-2, 1:-1]) / (2 * dt)
    Vvv = (W[1:-1, 2:] - 2 * W[1:-1, 1:-1] + W[1:-1, :-2]) / dv**2
    Ti, Vi = T[1:-1, 1:-1], V[1:-1, 1:-1]
    res = Vt + 0.5 * _squared_diffusion(diffusion, Ti, Vi) * Vvv
    if chi:
        res = res + _surface(consumption, Ti, Vi, "consumption")
    bmax = 0.0
    if terminal is None and prefs is not None and prefs.epsilon > 0:
        terminal = vf.terminal_wealth
    if terminal is not None:
        bmax = _terminal_error(vf, terminal, prefs.horizon if prefs is not None else grid.t[-1], grid.v)
    return ResidualReport(float(np.max(np.abs(res))), float(np.sqrt(np.mean(res**2))), bmax, grid, res)


def _terminal_error(value, terminal, horizon, v):
    v = np.asarray(v, dtype=float)
    got = np.asarray(value(np.full_like(v, horizon), v), dtype=float)
    want = np.asarray(terminal(v), dtype=float)
    return float(np.max(np.abs(got / want - 1.0)))


def crra_terminal_payout(prefs, lam) -> Callable:
    """``B'^-1(lam / (eps v)) = eps^(1/gamma) (exp(delta T) lam)^(-1/gamma) v^(1/gamma)``."""
    g = prefs.gamma
    level = prefs.epsilon ** (1.0 / g) * (math.exp(prefs.delta * prefs.horizon) * lam) ** (-1.0 / g)
    return lambda v: level * np.asarray(v, dtype=float) ** (1.0 / g)


def boundary_check(vf: Callable, prefs, lam: float, v_grid) -> float:
    """Largest relative gap between ``V*(T, v)`` and the CRRA terminal payout."""
    if not prefs.epsilon > 0:
        raise DomainError("the terminal condition needs epsilon > 0")
    return _terminal_error(vf, crra_terminal_payout(prefs, lam), prefs.horizon, v_grid)


def spatial_boundary_ok(vf: Callable, times, v_small: float = 1e-8, v_large: float = 1e6) -> bool:
    """``V -> 0`` as ``v -> 0`` and ``V`` finite and growing towards large ``v``."""
    times = np.asarray(times, dtype=float)
    lo = np.asarray(vf(times, np.full_like(times, v_small)), dtype=float)
    mid = np.asarray(vf(times, np.ones_like(times)), dtype=float)
    hi = np.asarray(vf(times, np.full_like(times, v_large)), dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        return False
    return bool(np.all(lo >= 0) and np.all(lo < 1e-2 * mid) and np.all(hi > 10 * mid))


def _dv_fourth_order(W, dv):
    # Richardson combination of the h and 2h central stencils
    d1 = (W[:, 3:-1] - W[:, 1:-3]) / (2 * dv)
    d2 = (W[:, 4:] - W[:, :-4]) / (4 * dv)
    return (4 * d1 - d2) / 3


def hjb_foc_check(J_surface: Callable, V_surface: Callable, prefs, grid: Grid2D,
                  consumption: Callable) -> float:
    """Largest ``|-dJ/dV* + exp(-delta t) C^(-gamma)|`` over the grid.

    ``dJ/dV*`` is the ratio of the ``v``-derivatives of ``J`` and ``V*``, each
    a fourth-order central difference; nodes within two of the ``v`` edges
    are skipped.
    """
    if prefs.chi != 1:
        raise DomainError("the first-order check needs chi = 1")
    T, V = grid.mesh
    dJ = _dv_fourth_order(_surface(J_surface, T, V, "utility"), grid.dv)
    dW = _dv_fourth_order(_surface(V_surface, T, V, "value"), grid.dv)
    if np.any(dW <= 0):
        raise GridError("value surface is not increasing in v")
    C = _surface(consumption, T[:, 2:-2], V[:, 2:-2], "consumption")
    if np.any(C <= 0):
        raise DomainError("consumption must be positive for the first-order check")
    marginal = np.exp(-prefs.delta * T[:, 2:-2]) * C ** (-prefs.gamma)
    return float(np.max(np.abs(marginal - dJ / dW)))
