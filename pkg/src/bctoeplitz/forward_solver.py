"""Leapfrog finite differences for the half-plane acoustic problem.

Solves ``u_tt - lap(u) - <grad ln rho, grad u> = 0`` for ``y > 0`` with zero
Cauchy data and the Neumann control ``u_y(x, 0, t) = f(x, t)`` on sigma.
The rectangle is wide enough that nothing reflected from its Dirichlet
edges can reach sigma or the region of interest before ``2T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .controls import Control, ExtendedControl
from .errors import CflViolation, GridMismatch, NegativeDensity

__all__ = [
    "SimGrid",
    "VelocityField",
    "WaveHistory",
    "solve_forward",
    "boundary_trace",
    "apply_M2T",
    "finite_speed_violation",
    "distance_to_sigma",
]

DEFAULT_CFL = 0.5


@dataclass(frozen=True)
class SimGrid:
    """Uniform space-time grid around the observation segment.

    ``dt = T / steps_per_T`` so that ``T`` and ``2T`` are time nodes. The
    rectangle is ``[alpha - L, beta + L] x [0, L]`` with ``L = 2T + margin``
    rounded up to whole cells.
    """

    sigma: tuple[float, float]
    T: float
    h: float
    steps_per_T: int
    margin: float | None = None

    def __post_init__(self):
        a, b = map(float, self.sigma)
        object.__setattr__(self, "sigma", (a, b))
        if not b > a:
            raise ValueError("sigma must have positive length")
        if self.T <= 0 or self.h <= 0 or self.steps_per_T < 1:
            raise ValueError("T, h and steps_per_T must be positive")
        cells = (b - a) / self.h
        if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
            raise GridMismatch(f"|sigma| = {b - a} is not a multiple of h = {self.h}")
        if self.margin is None:
            object.__setattr__(self, "margin", 4 * self.h)

    @classmethod
    def create(cls, sigma, T, h, cfl_ratio=DEFAULT_CFL, margin=None):
        """Pick the smallest ``steps_per_T`` with ``dt <= cfl_ratio * h / sqrt(2)``."""
        steps = math.ceil(T * math.sqrt(2.0) / (cfl_ratio * h) - 1e-9)
        return cls(sigma, T, h, steps, margin)

    def refined(self, factor: int = 2) -> "SimGrid":
        """Same box and CFL ratio with ``h`` and ``dt`` divided by ``factor``."""
        return SimGrid(self.sigma, self.T, self.h / factor, self.steps_per_T * factor, self.margin)

    @property
    def dt(self) -> float:
        return self.T / self.steps_per_T

    @property
    def cfl_ratio(self) -> float:
        return self.dt * math.sqrt(2.0) / self.h

    def check_cfl(self) -> None:
        if self.dt > self.h / math.sqrt(2.0) * (1 + 1e-12):
            raise CflViolation(f"dt = {self.dt:.4g} exceeds h/sqrt(2) = {self.h / math.sqrt(2):.4g}")

    @property
    def n_sigma(self) -> int:
        return int(round((self.sigma[1] - self.sigma[0]) / self.h))

    @property
    def pad(self) -> int:
        return math.ceil((2 * self.T + self.margin) / self.h - 1e-9)

    @property
    def x(self) -> np.ndarray:
        return self.sigma[0] + self.h * np.arange(-self.pad, self.n_sigma + self.pad + 1)

    @property
    def y(self) -> np.ndarray:
        return self.h * np.arange(self.pad + 1)

    @property
    def sigma_slice(self) -> slice:
        return slice(self.pad, self.pad + self.n_sigma + 1)

    @property
    def x_sigma(self) -> np.ndarray:
        return self.sigma[0] + self.h * np.arange(self.n_sigma + 1)

    def times(self, horizon: float) -> np.ndarray:
        """Time nodes on ``[0, horizon]``; ``horizon`` must be a node."""
        n = self.steps(horizon)
        return self.dt * np.arange(n + 1)

    def steps(self, horizon: float) -> int:
        n = horizon / self.dt
        if abs(n - round(n)) > 1e-8 * max(1.0, n):
            raise GridMismatch(f"horizon {horizon} is not a multiple of dt = {self.dt}")
        return int(round(n))

    def control(self, func=None, weight=None) -> Control:
        """Control on ``sigma x [0, T]``; zero if ``func`` is omitted."""
        func = func or (lambda X, Tt: np.zeros_like(X))
        return Control.from_function(func, self.x_sigma, self.times(self.T), weight)

    def extended_control(self, func=None, weight=None) -> ExtendedControl:
        func = func or (lambda X, Tt: np.zeros_like(X))
        return ExtendedControl.from_function(func, self.x_sigma, self.times(2 * self.T), weight)


@dataclass(frozen=True)
class VelocityField:
    """Reduced sound velocity sampled on a :class:`SimGrid` (``rho[j, i]`` at ``y_j, x_i``)."""

    x: np.ndarray
    y: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        if rho.shape != (len(self.y), len(self.x)):
            raise GridMismatch(f"rho shape {rho.shape} != ({len(self.y)}, {len(self.x)})")
        object.__setattr__(self, "rho", rho)

    @classmethod
    def constant(cls, grid: SimGrid, value: float = 1.0):
        return cls(grid.x, grid.y, np.full((grid.y.size, grid.x.size), float(value)))

    @classmethod
    def from_function(cls, grid: SimGrid, func):
        X, Y = np.meshgrid(grid.x, grid.y)
        return cls(grid.x, grid.y, np.broadcast_to(func(X, Y), X.shape).copy())

    @classmethod
    def from_csv(cls, path, grid: SimGrid):
        """One CSV line per ``y`` level, one column per ``x`` node."""
        return cls(grid.x, grid.y, np.loadtxt(path, delimiter=",", ndmin=2))

    def to_csv(self, path) -> None:
        np.savetxt(path, self.rho, delimiter=",", fmt="%.17g")

    def check(self) -> None:
        if not np.all(np.isfinite(self.rho)) or np.any(self.rho <= 0):
            raise NegativeDensity("rho must be finite and strictly positive")

    def boundary_rho(self, grid: SimGrid) -> np.ndarray:
        """``rho(x, 0)`` on the sigma nodes."""
        return self.rho[0, grid.sigma_slice].copy()

    def log_gradient(self, h: float):
        ln = np.log(self.rho)
        if min(ln.shape) < 3:
            return np.zeros_like(ln), np.zeros_like(ln)
        gy, gx = np.gradient(ln, h, edge_order=2)
        return gx, gy


@dataclass
class WaveHistory:
    """Wavefield frames plus the full boundary row at every time step."""

    x: np.ndarray
    y: np.ndarray
    dt: float
    h: float
    frame_steps: np.ndarray
    frames: np.ndarray
    boundary: np.ndarray = field(repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.dt * self.frame_steps

    @property
    def n_steps(self) -> int:
        return self.boundary.shape[0] - 1

    def nearest_frame(self, t: float) -> tuple[float, np.ndarray]:
        """Stored frame closest to ``t``; it must lie within half a time step."""
        k = int(np.argmin(np.abs(self.frame_steps * self.dt - t)))
        if abs(self.frame_steps[k] * self.dt - t) > 0.5 * self.dt + 1e-12:
            raise KeyError(f"no stored frame near t = {t}")
        return float(self.frame_steps[k] * self.dt), self.frames[k]

    def frame_at(self, t: float) -> np.ndarray:
        return self.nearest_frame(t)[1]

    def peak(self) -> float:
        return float(max(np.max(np.abs(self.frames), initial=0.0), np.max(np.abs(self.boundary), initial=0.0)))

    def frame_to_csv(self, path, t: float) -> None:
        np.savetxt(path, self.frame_at(t), delimiter=",", fmt="%.17g")


@njit(cache=True, nogil=True)
def _leapfrog(forcing, ax, ay, h, dt, save_every, n_frames):
    nsteps, nx = forcing.shape
    ny = ax.shape[0]
    prev = np.zeros((ny, nx))
    cur = np.zeros((ny, nx))
    nxt = np.zeros((ny, nx))
    boundary = np.zeros((nsteps + 1, nx))
    frames = np.zeros((n_frames, ny, nx))
    ih2 = 1.0 / (h * h)
    i2h = 0.5 / h
    c = dt * dt
    k = 1
    for n in range(nsteps):
        for j in range(ny - 1):
            for i in range(1, nx - 1):
                uxx = (cur[j, i + 1] - 2.0 * cur[j, i] + cur[j, i - 1]) * ih2
                ux = (cur[j, i + 1] - cur[j, i - 1]) * i2h
                if j == 0:
                    # ghost node u(x, -h) = u(x, h) - 2h f
                    fb = forcing[n, i]
                    uyy = (2.0 * cur[1, i] - 2.0 * cur[0, i] - 2.0 * h * fb) * ih2
                    uy = fb
                else:
                    uyy = (cur[j + 1, i] - 2.0 * cur[j, i] + cur[j - 1, i]) * ih2
                    uy = (cur[j + 1, i] - cur[j - 1, i]) * i2h
                rhs = uxx + uyy + ax[j, i] * ux + ay[j, i] * uy
                nxt[j, i] = 2.0 * cur[j, i] - prev[j, i] + c * rhs
        tmp = prev
        prev = cur
        cur = nxt
        nxt = tmp
        for i in range(nx):
            boundary[n + 1, i] = cur[0, i]
        if (n + 1) % save_every == 0 or n + 1 == nsteps:
            frames[k] = cur
            k += 1
    return boundary, frames


def _frame_steps(nsteps: int, save_every: int) -> np.ndarray:
    steps = list(range(0, nsteps + 1, save_every))
    if steps[-1] != nsteps:
        steps.append(nsteps)
    return np.array(steps)


def _sample_forcing(f: Control, grid: SimGrid, nsteps: int) -> np.ndarray:
    """Boundary forcing row for steps ``0 .. nsteps-1``, linear in t between samples."""
    if f.x.size != grid.n_sigma + 1 or not np.allclose(f.x, grid.x_sigma, atol=1e-9 * grid.h):
        raise GridMismatch("control x nodes must be the sigma nodes of the grid")
    t = grid.dt * np.arange(nsteps)
    if f.t.size > 1 and f.t[0] == 0.0 and abs(f.dt - grid.dt) <= 1e-12 * grid.dt:
        vals = f.values[:, : min(nsteps, f.t.size)]
        if vals.shape[1] < nsteps:
            vals = np.pad(vals, ((0, 0), (0, nsteps - vals.shape[1])))
    else:
        vals = np.array([np.interp(t, f.t, row, left=0.0, right=0.0) for row in f.values])
    forcing = np.zeros((nsteps, grid.x.size))
    forcing[:, grid.sigma_slice] = vals.T
    return forcing


def solve_forward(rho: VelocityField, f: Control, grid: SimGrid, t_end: float | None = None,
                  save_every: int = 1) -> WaveHistory:
    """Run the leapfrog scheme from rest up to ``t_end`` (default: the control horizon).

    Frames are kept every ``save_every`` steps (always including the first and
    the last); the boundary row is kept at every step.
    """
    grid.check_cfl()
    rho.check()
    if rho.rho.shape != (grid.y.size, grid.x.size):
        raise GridMismatch("velocity field is not sampled on this grid")
    t_end = f.horizon if t_end is None else t_end
    if t_end > 2 * grid.T + 1e-12:
        raise GridMismatch("t_end exceeds the causal margin 2T of the grid")
    nsteps = grid.steps(t_end)
    forcing = _sample_forcing(f, grid, nsteps)
    ax, ay = rho.log_gradient(grid.h)
    steps = _frame_steps(nsteps, max(1, int(save_every)))
    boundary, frames = _leapfrog(forcing, np.ascontiguousarray(ax), np.ascontiguousarray(ay),
                                 grid.h, grid.dt, max(1, int(save_every)), steps.size)
    return WaveHistory(grid.x, grid.y, grid.dt, grid.h, steps, frames, boundary)


def boundary_trace(history: WaveHistory, grid: SimGrid, t_end: float | None = None) -> ExtendedControl:
    """Pressure ``u(x, 0, t)`` on the sigma nodes for ``0 <= t <= t_end``."""
    n = history.n_steps if t_end is None else grid.steps(t_end)
    if n > history.n_steps:
        raise ValueError("history does not reach t_end")
    t = history.dt * np.arange(n + 1)
    return ExtendedControl(grid.x_sigma, t, history.boundary[: n + 1, grid.sigma_slice].T.copy())


def cumulative_trapezoid(values: np.ndarray, dt: float) -> np.ndarray:
    """Running trapezoid integral along the last axis, zero at the first node."""
    out = np.zeros_like(values)
    out[..., 1:] = np.cumsum(0.5 * dt * (values[..., 1:] + values[..., :-1]), axis=-1)
    return out


def apply_M2T(rho: VelocityField, f: ExtendedControl, grid: SimGrid) -> ExtendedControl:
    """Time integral of the boundary response to ``f`` over ``[0, 2T]``."""
    hist = solve_forward(rho, f, grid, t_end=2 * grid.T, save_every=grid.steps(2 * grid.T))
    trace = boundary_trace(hist, grid)
    return ExtendedControl(trace.x, trace.t, cumulative_trapezoid(trace.values, grid.dt), f.weight)


def distance_to_sigma(x, y, sigma) -> np.ndarray:
    a, b = sigma
    dx = np.maximum(np.maximum(a - x, 0.0), x - b)
    return np.hypot(dx, y)


def finite_speed_violation(history: WaveHistory, sigma, t: float) -> float:
    """Largest ``|u(., ., t)|`` farther than ``t + 3h`` from sigma.

    ``t`` is snapped to the nearest stored frame.
    """
    t, u = history.nearest_frame(t)
    X, Y = np.meshgrid(history.x, history.y)
    far = distance_to_sigma(X, Y, sigma) > t + 3 * history.h
    return float(np.max(np.abs(u[far]), initial=0.0))
