"""Discounted growth-optimal portfolio (GP) models.

Two models are provided:

* :class:`ConstantMprModel` -- the GP is a geometric Brownian motion
  ``dV = V (theta^2 dt + theta dW)``.
* :class:`MmmModel` -- the minimal market model, where the discounted GP is a
  squared Bessel process of dimension four run on the clock
  ``phi(t) = alpha0 / (4 eta) * (exp(eta t) - 1)``.

Both start at ``V_0 = 1``. Paths are drawn from the exact transition laws, so
Monte Carlo checks carry no discretisation bias. Every path owns a Philox
stream keyed by ``(seed, path index)``; a path's trajectory therefore does not
depend on how many other paths are drawn or in which order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import optimize

from .errors import CalibrationError, DataError, DomainError

STREAM_RULE = "philox4x64-key(seed,path)"
_MASK64 = (1 << 64) - 1
_PATH_CHUNK = 2048


@dataclass(frozen=True)
class ConstantMprModel:
    """GP with constant market price of risk ``theta`` (per sqrt-year)."""

    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise DomainError(f"theta must be positive and finite, got {self.theta}")


@dataclass(frozen=True)
class MmmModel:
    """Minimal market model with initial scaling ``alpha0`` and net growth rate ``eta``."""

    alpha0: float
    eta: float

    def __post_init__(self):
        for name in ("alpha0", "eta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive and finite, got {value}")

    def alpha(self, t):
        """Deterministic trend ``alpha_t = alpha0 exp(eta t)``."""
        return self.alpha0 * np.exp(self.eta * np.asarray(t, dtype=float))

    @property
    def y0(self) -> float:
        return 1.0 / self.alpha0


GpModel = Union[ConstantMprModel, MmmModel]


def mmm_phi(model: MmmModel, t):
    """Clock of the MMM: quadratic variation of ``sqrt(V)`` up to time ``t``.

    Accepts scalars or arrays; raises :class:`DomainError` for negative times.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or not np.all(np.isfinite(t_arr)):
        raise DomainError("mmm_phi requires finite t >= 0")
    out = model.alpha0 / 4.0 * np.expm1(model.eta * t_arr) / model.eta
    return float(out) if out.ndim == 0 else out


def gp_squared_diffusion(model: GpModel, t, v):
    """Squared absolute diffusion coefficient of the GP at ``(t, v)``.

    ``theta^2 v^2`` for constant MPR and ``alpha_t v`` for the MMM.
    """
    v = np.asarray(v, dtype=float)
    if isinstance(model, ConstantMprModel):
        return model.theta**2 * v**2
    return model.alpha(t) * v


def model_to_kv(model: GpModel) -> str:
    """Serialise a model as flat ``key = value`` lines."""
    if isinstance(model, ConstantMprModel):
        lines = ["model = bs", f"theta = {model.theta!r}"]
    else:
        lines = ["model = mmm", f"alpha0 = {model.alpha0!r}", f"eta = {model.eta!r}"]
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict:
    """Parse flat ``key = value`` text; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def model_from_kv(text_or_mapping) -> GpModel:
    kv = parse_kv(text_or_mapping) if isinstance(text_or_mapping, str) else dict(text_or_mapping)
    kind = kv.get("model", "mmm" if "alpha0" in kv else "bs")
    try:
        if kind == "mmm":
            return MmmModel(float(kv["alpha0"]), float(kv["eta"]))
        if kind == "bs":
            return ConstantMprModel(float(kv["theta"]))
    except KeyError as exc:
        raise DataError(f"missing model parameter {exc.args[0]!r}") from None
    raise DataError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class TimeGrid:
    """Equally spaced time grid on ``[t0, t1]`` with ``n_steps`` intervals (years)."""

    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise DomainError("TimeGrid requires t0 < t1")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError("TimeGrid requires an integer n_steps >= 1")
        if self.t0 < 0:
            raise DomainError("TimeGrid requires t0 >= 0")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n_steps + 1)

    @classmethod
    def with_step(cls, t0: float, t1: float, dt: float) -> "TimeGrid":
        """Grid whose step is as close as possible to ``dt``."""
        return cls(t0, t1, max(1, int(round((t1 - t0) / dt))))


@dataclass(frozen=True, eq=False)
class PathSet:
    """Simulated discounted-GP trajectories, one row per path."""

    grid: TimeGrid
    values: np.ndarray
    seed: int
    per_path_streams: str = STREAM_RULE
    first_path: int = 0

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times


def path_rng(seed: int, path: int) -> np.random.Generator:
    """Counter-based generator owned by one path."""
    key = np.array([seed & _MASK64, path & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _normals(seed: int, paths: range, shape: tuple) -> np.ndarray:
    out = np.empty((len(paths),) + shape)
    # one generator rekeyed per path gives the same streams as path_rng
    bits = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
    gen = np.random.Generator(bits)
    state = bits.state
    zeros = np.zeros(4, dtype=np.uint64)
    for row, p in enumerate(paths):
        state["state"] = {"counter": zeros, "key": np.array([seed & _MASK64, p & _MASK64], dtype=np.uint64)}
        state["buffer_pos"], state["has_uint32"], state["uinteger"] = 4, 0, 0
        bits.state = state
        out[row] = gen.standard_normal(shape)
    return out


def _n_normals(model: GpModel) -> int:
    return 1 if isinstance(model, ConstantMprModel) else 4


def bessel4_step(x, tau, z):
    """Exact squared-Bessel(4) transition over clock increment ``tau``.

    ``z`` has a trailing axis of four standard normals. Given ``X = x`` the
    result is ``tau * chi2_4(x / tau)``, drawn as
    ``tau * ((z1 + sqrt(x/tau))^2 + z2^2 + z3^2 + z4^2)``.
    """
    shift = np.sqrt(x / tau)
    return tau * ((z[..., 0] + shift) ** 2 + z[..., 1] ** 2 + z[..., 2] ** 2 + z[..., 3] ** 2)


def _advance(model: GpModel, v, t, s, z):
    if isinstance(model, ConstantMprModel):
        dt = s - t
        return v * np.exp(0.5 * model.theta**2 * dt + model.theta * np.sqrt(dt) * z[..., 0])
    tau = mmm_phi(model, s) - mmm_phi(model, t)
    return bessel4_step(v, tau, z)


def simulate_gp(model: GpModel, grid: TimeGrid, n_paths: int, seed: int, first_path: int = 0) -> PathSet:
    """Simulate ``n_paths`` discounted-GP paths on ``grid`` starting from ``V = 1``.

    Paths ``first_path, ..., first_path + n_paths - 1`` are produced; path ``p``
    is a function of ``(seed, p)`` only, so ranges can be simulated in chunks.
    """
    if int(n_paths) != n_paths or n_paths < 1:
        raise DomainError("n_paths must be a positive integer")
    times = grid.times
    k = _n_normals(model)
    values = np.empty((n_paths, grid.n_steps + 1))
    values[:, 0] = 1.0
    for lo in range(0, n_paths, _PATH_CHUNK):
        hi = min(n_paths, lo + _PATH_CHUNK)
        z = _normals(seed, range(first_path + lo, first_path + hi), (grid.n_steps, k))
        v = values[lo:hi, 0].copy()
        for j in range(grid.n_steps):
            v = _advance(model, v, times[j], times[j + 1], z[:, j])
            values[lo:hi, j + 1] = v
    return PathSet(grid, values, seed, STREAM_RULE, first_path)


def sample_gp_transition(model: GpModel, t: float, v, s: float, n_paths: int, seed: int, first_path: int = 0):
    """Draw ``V_s`` given ``V_t = v`` from the exact transition law.

    ``v`` may be a scalar or an array of length ``n_paths`` (one start per path).
    """
    if s < t:
        raise DomainError("sample_gp_transition requires s >= t")
    v = np.broadcast_to(np.asarray(v, dtype=float), (n_paths,))
    if s == t:
        return v.copy()
    z = _normals(seed, range(first_path, first_path + n_paths), (_n_normals(model),))
    return _advance(model, v, t, s, z)


def calibrate_mmm(series, dt: float = 1.0 / 12.0) -> MmmModel:
    """Fit ``(alpha0, eta)`` to a discounted GP proxy series.

    The realised quadratic variation of ``sqrt(V)`` (cumulative sum of squared
    increments) is matched to ``phi(t)`` in least squares over every
    observation date. Because ``phi`` is linear in ``alpha0`` the fit profiles
    ``alpha0`` out and searches ``log(eta)`` only. The series is rescaled to
    start at 1 before fitting.
    """
    values = np.asarray(series, dtype=float)
    if values.ndim != 1 or values.size < 3:
        raise DataError("calibrate_mmm needs at least 3 observations")
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise DataError("calibrate_mmm needs strictly positive finite values")
    if not dt > 0:
        raise DomainError("dt must be positive")
    root = np.sqrt(values / values[0])
    qv = np.cumsum(np.diff(root) ** 2)
    if qv[-1] <= 0:
        raise CalibrationError("series has zero quadratic variation")
    t = dt * np.arange(1, values.size)

    def shape(eta):
        return np.expm1(eta * t) / (4.0 * eta)

    def profile(log_eta):
        g = shape(math.exp(log_eta))
        a = g @ qv / (g @ g)
        r = a * g - qv
        return r @ r

    grid = np.linspace(math.log(1e-6), math.log(2.0), 81)
    best = grid[int(np.argmin([profile(x) for x in grid]))]
    res = optimize.minimize_scalar(profile, bounds=(best - 0.2, best + 0.2), method="bounded",
                                   options={"xatol": 1e-10})
    eta = math.exp(res.x)
    g = shape(eta)
    alpha0 = float(g @ qv / (g @ g))
    if not alpha0 > 0:
        raise CalibrationError("fitted alpha0 is not positive")
    return MmmModel(alpha0, eta)
