"""Lattice of translated boundary sources and the block-Toeplitz Gram system.

The sources ``g_j^i(x, t) = g(x - alpha - j*eps, t - i*delta)`` tile
``sigma x [0, 2T]``. Because the medium does not change in time, the Gram
entries ``((M + M*) g_j^i, g_l^k)`` depend on ``k - i`` only, so one block
row, computed from the ``M`` sources of the first time slot, determines the
whole matrix.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .block_toeplitz import BlockToeplitzSPD, expand_dense
from .control_ops import pairing
from .controls import ExtendedControl
from .errors import AssemblyFailure, EmptySigma, EmptySource, NonPositiveGram
from .forward_solver import SimGrid, VelocityField, apply_M2T

__all__ = [
    "Shape",
    "SourceLattice",
    "GramAssembly",
    "build_lattice",
    "assemble_gram",
    "assemble_rhs",
    "toeplitz_deviation",
    "symmetry_deviation",
    "mass_matrix",
]

DEFAULT_RHS_SCALE = 4.0


class Shape(str, enum.Enum):
    CONSTANT = "constant"
    HAT = "hat"
    BUMP = "bump"


def _profile(shape: Shape, s: np.ndarray, closed_right: bool) -> np.ndarray:
    """1D factor of the basic source on the unit cell."""
    s = np.asarray(s, dtype=float)
    if shape is Shape.CONSTANT:
        inside = (s >= 0) & ((s <= 1) if closed_right else (s < 1))
        return inside.astype(float)
    if shape is Shape.HAT:
        return np.clip(1.0 - np.abs(2.0 * s - 1.0), 0.0, None)
    z = 2.0 * s - 1.0
    out = np.zeros_like(s)
    m = np.abs(z) < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - z[m] ** 2))
    return out


def _moments(shape: Shape) -> tuple[float, float]:
    """``int_0^1 phi`` and ``int_0^1 s phi`` for the unit-cell factor."""
    if shape is Shape.CONSTANT:
        return 1.0, 0.5
    if shape is Shape.HAT:
        return 0.5, 0.25
    kw = dict(epsabs=1e-14, epsrel=1e-13, limit=200)
    a0 = integrate.quad(lambda s: _profile(shape, np.array([s]), False)[0], 0, 1, **kw)[0]
    # symmetric about 1/2
    return a0, 0.5 * a0


@dataclass(frozen=True)
class SourceLattice:
    """``M x N`` translates of a separable basic source ``phi(x/eps) phi(t/delta)``."""

    M: int
    N: int
    sigma: tuple[float, float]
    T: float
    shape: Shape = Shape.HAT

    @property
    def eps(self) -> float:
        return (self.sigma[1] - self.sigma[0]) / self.M

    @property
    def delta(self) -> float:
        return 2.0 * self.T / self.N

    def cell(self, j: int, i: int) -> tuple[tuple[float, float], tuple[float, float]]:
        """Support ``Delta_j^i`` as ``((x0, x1), (t0, t1))``."""
        x0 = self.sigma[0] + j * self.eps
        t0 = i * self.delta
        return (x0, x0 + self.eps), (t0, t0 + self.delta)

    def source(self, j: int, i: int, x, t) -> np.ndarray:
        """``g_j^i`` on the tensor grid ``x`` by ``t`` (shape ``(len(x), len(t))``)."""
        sx = (np.asarray(x, float) - self.sigma[0] - j * self.eps) / self.eps
        st = (np.asarray(t, float) - i * self.delta) / self.delta
        px = _profile(self.shape, sx, closed_right=(j == self.M - 1))
        pt = _profile(self.shape, st, closed_right=(i == self.N - 1))
        return np.outer(px, pt)

    def control(self, j: int, i: int, grid: SimGrid) -> ExtendedControl:
        t = grid.times(2 * grid.T)
        return ExtendedControl(grid.x_sigma, t, self.source(j, i, grid.x_sigma, t))

    def expand(self, coeffs, grid: SimGrid) -> ExtendedControl:
        """``sum c_j^i g_j^i`` for coefficients ordered like the row ``C``."""
        c = np.asarray(coeffs, dtype=float).reshape(self.N, self.M)
        t = grid.times(2 * grid.T)
        vals = np.zeros((grid.x_sigma.size, t.size))
        for i in range(self.N):
            for j in range(self.M):
                if c[i, j] != 0.0:
                    vals += c[i, j] * self.source(j, i, grid.x_sigma, t)
        return ExtendedControl(grid.x_sigma, t, vals)


def build_lattice(M: int, N: int, sigma, T: float, shape="hat") -> SourceLattice:
    """Lattice with ``eps = |sigma| / M`` and ``delta = 2T / N``."""
    if M < 1 or N < 1:
        raise ValueError("M and N must be at least 1")
    a, b = map(float, sigma)
    if not b > a:
        raise EmptySigma(f"sigma = [{a}, {b}] is empty")
    if T <= 0:
        raise ValueError("T must be positive")
    return SourceLattice(int(M), int(N), (a, b), float(T), Shape(shape))


@dataclass
class GramAssembly:
    """Assembled system ``C G = B`` plus diagnostics."""

    G: BlockToeplitzSPD
    B: np.ndarray
    raw_blocks: np.ndarray = field(repr=False)
    full_entries: np.ndarray | None = field(default=None, repr=False)
    min_eigenvalue: float | None = None
    n_negative: int | None = None
    block_asymmetry: float = 0.0


def _sample_check(lattice: SourceLattice, grid: SimGrid) -> None:
    g = lattice.control(0, 0, grid)
    if not np.any(g.values):
        raise EmptySource("basic source vanishes on every grid node; refine the grid")


def _responses(rho, controls, grid, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda f: apply_M2T(rho, f, grid), controls))
    return [apply_M2T(rho, f, grid) for f in controls]


def assemble_gram(rho: VelocityField, lattice: SourceLattice, grid: SimGrid, *, full: bool = False,
                  threads: int = 1, check_positive: bool = False, tol: float = 1e-8,
                  rhs_scale: float = DEFAULT_RHS_SCALE) -> GramAssembly:
    """Gram blocks ``gamma_m[j, l] = ((M + M*) g_j^0, g_l^m)`` and the right-hand side.

    Only the ``M`` sources of the first time slot are simulated. For
    ``m >= 1`` the term ``(g_j^0, M g_l^m)`` is identically zero because the
    response to ``g_l^m`` starts after ``g_j^0`` has ended. With ``full`` all
    ``M N`` sources are simulated and the complete entry table
    ``E[i, k, j, l]`` is kept for the Toeplitz and symmetry diagnostics.

    The operator ``M + M*`` is only conditionally positive (positive on
    controls with zero time mean), so the expanded Gram matrix typically has
    ``M`` negative eigenvalues. The inertia is reported in ``n_negative``;
    ``check_positive`` turns a negative eigenvalue into ``NonPositiveGram``.
    """
    if abs(lattice.T - grid.T) > 1e-12 * grid.T or tuple(lattice.sigma) != tuple(grid.sigma):
        raise AssemblyFailure("lattice and grid disagree on T or sigma")
    _sample_check(lattice, grid)
    M, N = lattice.M, lattice.N
    basis = [[lattice.control(j, i, grid) for j in range(M)] for i in range(N)]
    rows = range(N) if full else range(1)
    sims = [basis[i][j] for i in rows for j in range(M)]
    try:
        resp = _responses(rho, sims, grid, threads)
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise AssemblyFailure(f"forward simulation failed: {exc}") from exc
    response = {}
    for n, (i, j) in enumerate((i, j) for i in rows for j in range(M)):
        response[i, j] = resp[n]

    raw = np.zeros((N, M, M))
    for m in range(N):
        for j in range(M):
            for l in range(M):
                val = pairing(response[0, j], basis[m][l])
                if m == 0:
                    val += pairing(basis[0][j], response[0, l])
                raw[m, j, l] = val

    table = None
    if full:
        table = np.zeros((N, N, M, M))
        for i in range(N):
            for k in range(N):
                for j in range(M):
                    for l in range(M):
                        table[i, k, j, l] = (pairing(response[i, j], basis[k][l])
                                             + pairing(basis[i][j], response[k, l]))

    scale = np.max(np.abs(raw))
    asym = float(np.max(np.abs(raw - raw.transpose(0, 2, 1))) / scale) if scale else 0.0
    G = BlockToeplitzSPD(raw).symmetrized()
    lam = neg = None
    if G.size <= 600:
        ev = np.linalg.eigvalsh(expand_dense(G))
        lam = float(ev[0])
        neg = int(np.sum(ev < -tol * np.max(np.abs(ev))))
        if check_positive and lam < -tol * np.max(np.abs(G.blocks)):
            raise NonPositiveGram(f"smallest eigenvalue {lam:.3e} after symmetrization")
    B = assemble_rhs(lattice, lattice.T, scale=rhs_scale)
    return GramAssembly(G, B, raw, table, lam, neg, asym)


def assemble_rhs(lattice: SourceLattice, T: float, scale: float = DEFAULT_RHS_SCALE) -> np.ndarray:
    """``beta_l^k = scale * int (T - t) g_l^k dx dt``, ordered ``k`` outer, ``l`` inner.

    The integral factorizes over the separable source and is evaluated from
    the exact moments of the unit-cell profile.
    """
    a0, a1 = _moments(lattice.shape)
    eps, delta = lattice.eps, lattice.delta
    k = np.arange(lattice.N)
    per_slot = scale * (eps * a0) * delta * ((T - k * delta) * a0 - delta * a1)
    return np.repeat(per_slot, lattice.M)


def toeplitz_deviation(full_entries) -> float:
    """``max |E[i,k] - E[i+1,k+1]| / max |E|`` over the full entry table."""
    E = np.asarray(full_entries, dtype=float)
    scale = np.max(np.abs(E))
    if scale == 0.0 or E.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(E[:-1, :-1] - E[1:, 1:])) / scale)


def symmetry_deviation(full_entries) -> float:
    """``max |E[i,k,j,l] - E[k,i,l,j]| / max |E|``."""
    E = np.asarray(full_entries, dtype=float)
    scale = np.max(np.abs(E))
    return float(np.max(np.abs(E - E.transpose(1, 0, 3, 2))) / scale) if scale else 0.0


def mass_matrix(lattice: SourceLattice, grid: SimGrid) -> np.ndarray:
    """Plain pairings ``(g_j^i, g_l^k)`` in the row ordering of ``C``."""
    basis = [lattice.control(j, i, grid) for i in range(lattice.N) for j in range(lattice.M)]
    n = len(basis)
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(a, n):
            out[a, b] = out[b, a] = pairing(basis[a], basis[b])
    return out
