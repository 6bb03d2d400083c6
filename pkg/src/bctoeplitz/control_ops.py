"""Operators on boundary controls and the two routes to the connecting operator.

``odd_extend``, ``time_integrate``, ``odd_part`` and ``restrict`` act on the
time axis only. ``apply_CT`` builds the connecting operator from boundary
measurements alone, ``ct_form_oracle`` from the interior wavefields; they
must agree up to discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controls import Control, ExtendedControl, check_same_grid
from .errors import GridMismatch
from .forward_solver import (
    SimGrid,
    VelocityField,
    apply_M2T,
    cumulative_trapezoid,
    distance_to_sigma,
    solve_forward,
)

__all__ = [
    "Control",
    "ExtendedControl",
    "KappaProfile",
    "trapezoid_weights",
    "inner_product_outer",
    "pairing",
    "odd_extend",
    "odd_extend_adjoint",
    "time_integrate",
    "odd_part",
    "restrict",
    "apply_CT",
    "ct_form_oracle",
    "inner_product_inner",
    "make_kappa",
]


def trapezoid_weights(n: int, step: float) -> np.ndarray:
    w = np.full(n, step)
    if n == 1:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * step
    return w


def _weights_2d(f: Control, rho_weight: np.ndarray | None) -> np.ndarray:
    wx = trapezoid_weights(f.x.size, f.x[1] - f.x[0] if f.x.size > 1 else 0.0)
    if rho_weight is not None:
        wx = wx * rho_weight
    wt = trapezoid_weights(f.t.size, f.dt)
    return np.outer(wx, wt)


def inner_product_outer(f: Control, g: Control, boundary_rho=None) -> float:
    """``int f g rho(x, 0) dx dt`` by the trapezoid rule in x and t.

    ``boundary_rho`` defaults to ``f.weight``.
    """
    check_same_grid(f, g)
    w = f.weight if boundary_rho is None else np.asarray(boundary_rho, dtype=float)
    if w.shape != f.x.shape:
        raise GridMismatch("boundary_rho must be sampled on the control x nodes")
    return float(np.sum(_weights_2d(f, w) * f.values * g.values))


def pairing(f: Control, g: Control) -> float:
    """Unit-weight trapezoid pairing (the plain L2 product on sigma x [0, horizon])."""
    check_same_grid(f, g)
    return float(np.sum(_weights_2d(f, None) * f.values * g.values))


def _mid(t: np.ndarray) -> int:
    n = t.size - 1
    if n % 2:
        raise GridMismatch("extended time grid needs an even number of intervals")
    return n // 2


def odd_extend(f: Control) -> ExtendedControl:
    """``f`` on ``[0, T)`` and ``-f(2T - t)`` on ``(T, 2T]``.

    At the node ``t = T`` itself the extension takes the mean of the two
    one-sided values, which is zero; this keeps the discrete adjoint
    identity exact.
    """
    v = f.values
    k = v.shape[1] - 1
    ext = np.concatenate([v[:, :k], np.zeros((v.shape[0], 1)), -v[:, k - 1 :: -1]], axis=1)
    t = f.dt * np.arange(2 * k + 1)
    return ExtendedControl(f.x, t, ext, f.weight)


def time_integrate(f: Control) -> Control:
    """Running integral from 0 by the cumulative trapezoid rule."""
    return f.with_values(cumulative_trapezoid(f.values, f.dt))


def odd_part(f: ExtendedControl) -> ExtendedControl:
    """``(f(t) - f(2T - t)) / 2``."""
    _mid(f.t)
    return f.with_values(0.5 * (f.values - f.values[:, ::-1]))


def restrict(f: ExtendedControl) -> Control:
    """Restriction to ``[0, T]``."""
    k = _mid(f.t)
    return Control(f.x, f.t[: k + 1], f.values[:, : k + 1].copy(), f.weight)


def odd_extend_adjoint(f: ExtendedControl) -> Control:
    """Adjoint of :func:`odd_extend`: twice the restricted odd part."""
    r = restrict(odd_part(f))
    return r.with_values(2.0 * r.values)


def apply_CT(rho: VelocityField, f: Control, grid: SimGrid) -> Control:
    """Connecting operator from boundary data: half of ``S* J R S f``."""
    m = apply_M2T(rho, odd_extend(f), grid)
    out = odd_extend_adjoint(m)
    return out.with_values(0.5 * out.values)


def inner_product_inner(rho: VelocityField, u: np.ndarray, v: np.ndarray, grid: SimGrid,
                        radius: float) -> float:
    """``int u v rho dx dy`` over the points closer than ``radius`` to sigma."""
    X, Y = np.meshgrid(grid.x, grid.y)
    mask = distance_to_sigma(X, Y, grid.sigma) < radius
    wy = np.full(grid.y.size, grid.h)
    wy[0] = 0.5 * grid.h
    w = wy[:, None] * grid.h * mask
    return float(np.sum(w * rho.rho * u * v))


def ct_form_oracle(rho: VelocityField, f: Control, g: Control, grid: SimGrid) -> float:
    """``(u^f(T), u^g(T))`` in the rho-weighted L2 space over the T-neighbourhood of sigma."""
    T = grid.T
    final = grid.steps(T)
    uf = solve_forward(rho, f, grid, t_end=T, save_every=final).frame_at(T)
    ug = uf if g is f else solve_forward(rho, g, grid, t_end=T, save_every=final).frame_at(T)
    return inner_product_inner(rho, uf, ug, grid, T)


@dataclass(frozen=True)
class KappaProfile:
    """``T - t`` on ``sigma x [0, T]`` and its odd extension on ``[0, 2T]``."""

    kappa: Control
    kappa_ext: ExtendedControl


def make_kappa(T: float, grid: SimGrid, weight=None) -> KappaProfile:
    if T <= 0:
        raise ValueError("T must be positive")
    if abs(T - grid.T) > 1e-12 * T:
        raise GridMismatch("T differs from the grid's final time")
    kappa = grid.control(lambda X, t: T - t, weight)
    ext = grid.extended_control(lambda X, t: T - t, weight)
    return KappaProfile(kappa, ext)
