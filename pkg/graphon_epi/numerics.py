"""
Shared deterministic numerics: time grids, explicit one-step integrators,
path interpolation, midpoint quadrature and counter-based RNG streams.

The steppers are backend-neutral: states may be NumPy arrays or torch tensors,
as long as `+` and scalar `*` are defined on them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from graphon_epi.errors import DimensionError, NonFiniteError

MASK64 = (1 << 64) - 1

Field = Callable[[float, Any], Any]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k·dt on [0, horizon]"""
    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise DimensionError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.horizon > 0:
            raise DimensionError(f"horizon must be > 0, got {self.horizon}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        # k·dt exactly, with the last point pinned to T
        t = np.arange(self.n_steps + 1, dtype=float) * self.dt
        t[-1] = self.horizon
        return t

    def time(self, k: int) -> float:
        return self.horizon if k == self.n_steps else k * self.dt

    @classmethod
    def from_dt(cls, horizon: float, dt: float) -> TimeGrid:
        return cls(horizon=horizon, n_steps=max(1, int(round(horizon / dt))))

    def refined(self, factor: int) -> TimeGrid:
        return TimeGrid(self.horizon, self.n_steps * factor)


def _all_finite(value: Any) -> bool:
    if hasattr(value, "isfinite"):  # torch tensors
        return bool(value.isfinite().all())
    return bool(np.all(np.isfinite(value)))


def _checked(field: Field, t: float, y: Any) -> Any:
    dy = field(t, y)
    if not _all_finite(dy):
        raise NonFiniteError(f"non-finite derivative at t={t:.6g}", t=t)
    return dy


def rk4_step(field: Field, t: float, y: Any, dt: float) -> Any:
    """Classical 4th-order Runge-Kutta update; dt may be negative for backward sweeps."""
    k1 = _checked(field, t, y)
    k2 = _checked(field, t + 0.5 * dt, y + (0.5 * dt) * k1)
    k3 = _checked(field, t + 0.5 * dt, y + (0.5 * dt) * k2)
    k4 = _checked(field, t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def euler_step(field: Field, t: float, y: Any, dt: float) -> Any:
    """Explicit Euler update y + dt·field(t, y)."""
    return y + dt * _checked(field, t, y)


def interpolate_path(grid: TimeGrid, path: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolation in time of a gridded path (first axis = time)."""
    s = min(max(t / grid.dt, 0.0), float(grid.n_steps))
    k = min(int(np.floor(s)), grid.n_steps - 1)
    w = s - k
    if w == 0.0:
        return path[k]
    return (1.0 - w) * path[k] + w * path[k + 1]


def resample_path(source: TimeGrid, path: np.ndarray, target_times: np.ndarray) -> np.ndarray:
    """Sample a gridded path at arbitrary times (linear interpolation)."""
    return np.stack([interpolate_path(source, path, float(t)) for t in target_times])


def spline_path(grid: TimeGrid, path: np.ndarray, lower: Optional[float] = None,
                upper: Optional[float] = None) -> Callable[[float], np.ndarray]:
    """Cubic-spline interpolant in time of a gridded path, clipped to [lower, upper].

    Used inside RK4 stages, where linear interpolation would cap the order at 2.
    """
    spline = CubicSpline(grid.times, np.asarray(path, dtype=float), axis=0)
    if lower is None and upper is None:
        return spline
    lo = -np.inf if lower is None else lower
    hi = np.inf if upper is None else upper
    return lambda t: np.clip(spline(t), lo, hi)


def midpoints(resolution: int) -> np.ndarray:
    """Cell midpoints of a uniform partition of [0, 1]."""
    return (np.arange(resolution, dtype=float) + 0.5) / resolution


def midpoint_quadrature_2d(func: Callable[[np.ndarray, np.ndarray], np.ndarray], resolution: int) -> float:
    """∫∫_{[0,1]²} func(x, y) dx dy by the midpoint rule on a resolution×resolution grid."""
    m = midpoints(resolution)
    values = func(m[:, None], m[None, :])
    return float(np.sum(values)) / (resolution * resolution)


@dataclass(frozen=True)
class RngStream:
    """Counter-based (Philox) random stream keyed by (seed, stream id).

    Distinct stream ids give independent sequences; the same pair replays
    the same sequence bit for bit. Streams share no state, so they can be
    handed to any execution context.
    """
    seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & MASK64, self.stream_id & MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, offset: int) -> RngStream:
        return RngStream(self.seed, (self.stream_id + offset) & MASK64)

    def torch_seed(self) -> int:
        """A 63-bit integer seed drawn from this stream (for torch generators)."""
        return int(self.generator().integers(0, 2 ** 63 - 1))


def block_index(cumulative: np.ndarray, x: Any) -> np.ndarray:
    """Block of each index for the partition with cumulative masses `cumulative`.

    Intervals are half-open [c_{i-1}, c_i) with the last one closed, so x = 1
    lands in the last block of positive mass; empty blocks receive no index.
    """
    cumulative = np.asarray(cumulative, dtype=float)
    blocks = np.searchsorted(cumulative, np.asarray(x, dtype=float), side="right")
    positive = np.flatnonzero(np.diff(cumulative, prepend=0.0) > 0)
    last = int(positive[-1]) if positive.size else len(cumulative) - 1
    return np.minimum(blocks, last)


def interior_points(grid: TimeGrid) -> range:
    """Grid indices at which `centered_derivative` is defined"""
    if grid.n_steps >= 4:
        return range(2, grid.n_steps - 1)
    return range(1, grid.n_steps)


def centered_derivative(path: np.ndarray, k: int, dt: float) -> np.ndarray:
    """Time derivative of a gridded path at step k.

    Five-point stencil (error O(dt⁴)) where two neighbours exist on each
    side, three-point (O(dt²)) otherwise.
    """
    if 2 <= k <= len(path) - 3:
        return (path[k - 2] - 8.0 * path[k - 1] + 8.0 * path[k + 1] - path[k + 2]) / (12.0 * dt)
    return (path[k + 1] - path[k - 1]) / (2.0 * dt)
