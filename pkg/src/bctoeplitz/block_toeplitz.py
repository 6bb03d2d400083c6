"""Symmetric positive definite block-Toeplitz matrices.

A matrix with ``N x N`` blocks of size ``M x M`` whose block ``(i, k)`` is
``gamma[|i - k|]`` is stored by its first block row only. The fast path
computes the last block column ``Y`` of the inverse with a Levinson-type
recursion and rebuilds (or applies) the inverse from ``Y`` alone; both cost
O(M^3 N^2). Dense elimination oracles are kept alongside for verification.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (
    NonSymmetric,
    NotPositive,
    Singular,
    SingularCorner,
    SingularIntermediate,
)

__all__ = [
    "BlockToeplitzSPD",
    "BlockColumn",
    "SpdDiagnostics",
    "expand_dense",
    "last_block_unit",
    "validate_spd",
    "levinson_y",
    "invert_from_y",
    "solve_row",
    "dense_oracle_solve",
    "dense_inverse",
    "random_spd_block_toeplitz",
    "save_csv",
    "load_csv",
    "save_binary",
    "load_binary",
]

STRUCT_RTOL = 1e-8
SOLVE_RTOL = 1e-9
PIVOT_RTOL = 1e-13


@dataclass(frozen=True)
class BlockToeplitzSPD:
    """First block row ``[gamma_0, ..., gamma_{N-1}]`` of a block-Toeplitz matrix.

    Parameters
    ----------
    blocks : array_like, shape (N, M, M)
        ``blocks[m]`` sits at every block position with ``|i - k| = m``.
    """

    blocks: np.ndarray

    def __post_init__(self):
        b = np.array(self.blocks, dtype=float)
        if b.ndim == 1:
            b = b.reshape(-1, 1, 1)
        if b.ndim != 3 or b.shape[1] != b.shape[2]:
            raise ValueError(f"blocks must have shape (N, M, M), got {b.shape}")
        if b.shape[0] == 0 or b.shape[1] == 0:
            raise ValueError("block-Toeplitz matrix needs M >= 1 and N >= 1")
        if not np.all(np.isfinite(b)):
            raise ValueError("blocks contain NaN or Inf")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @property
    def M(self) -> int:
        return self.blocks.shape[1]

    @property
    def N(self) -> int:
        return self.blocks.shape[0]

    @property
    def size(self) -> int:
        return self.M * self.N

    def leading(self, k: int) -> "BlockToeplitzSPD":
        """Leading principal section of order ``k + 1`` blocks."""
        return BlockToeplitzSPD(self.blocks[: k + 1])

    def shifted(self, lam: float) -> "BlockToeplitzSPD":
        """``G + lam * I``; keeps the Toeplitz structure."""
        b = self.blocks.copy()
        b[0] += lam * np.eye(self.M)
        return BlockToeplitzSPD(b)

    def symmetrized(self) -> "BlockToeplitzSPD":
        return BlockToeplitzSPD(0.5 * (self.blocks + self.blocks.transpose(0, 2, 1)))

    def matvec_rows(self, rows) -> np.ndarray:
        """``rows @ expand_dense(self)`` without forming the dense matrix."""
        r = np.atleast_2d(np.asarray(rows, dtype=float))
        n, m = self.N, self.M
        rb = r.reshape(r.shape[0], n, m)
        out = np.zeros_like(rb)
        for i in range(n):
            for k in range(n):
                out[:, k] += rb[:, i] @ self.blocks[abs(i - k)]
        return out.reshape(r.shape)


@dataclass(frozen=True)
class BlockColumn:
    """Block column ``(Y_0, ..., Y_{N-1})'`` with ``Y_l`` of size ``M x M``."""

    blocks: np.ndarray
    normalizers: np.ndarray = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return self.blocks.shape[1]

    @property
    def N(self) -> int:
        return self.blocks.shape[0]

    def stacked(self) -> np.ndarray:
        """The ``MN x M`` matrix obtained by stacking the blocks."""
        return self.blocks.reshape(self.N * self.M, self.M)


@dataclass(frozen=True)
class SpdDiagnostics:
    symmetric: bool
    symmetry_deviation: float
    min_pivot: float
    positive: bool


def _as_btoeplitz(G) -> BlockToeplitzSPD:
    return G if isinstance(G, BlockToeplitzSPD) else BlockToeplitzSPD(G)


def last_block_unit(M: int, N: int) -> np.ndarray:
    """The block column ``(O, ..., O, I)'`` as an ``MN x M`` array."""
    e = np.zeros((M * N, M))
    e[-M:] = np.eye(M)
    return e


def expand_dense(G: BlockToeplitzSPD) -> np.ndarray:
    """Materialize the ``MN x MN`` matrix with block ``(i, k) = gamma_|i-k|``."""
    G = _as_btoeplitz(G)
    n, m = G.N, G.M
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    # (n, n, m, m) -> (n*m, n*m) with block rows outermost
    return G.blocks[idx].transpose(0, 2, 1, 3).reshape(n * m, n * m)


def validate_spd(G: BlockToeplitzSPD, tol: float = STRUCT_RTOL, strict: bool = True) -> SpdDiagnostics:
    """Symmetry and positivity of the expanded matrix.

    Symmetry is judged on the full expansion (which forces every block to be
    symmetric); positivity on the pivots of unpivoted symmetric elimination.
    With ``strict`` a violation raises :class:`NonSymmetric` or
    :class:`NotPositive`, otherwise it is only reported.
    """
    A = expand_dense(G)
    scale = np.max(np.abs(A))
    if scale == 0.0:
        if strict:
            raise NotPositive("zero matrix")
        return SpdDiagnostics(True, 0.0, 0.0, False)
    dev = float(np.max(np.abs(A - A.T)) / scale)
    symmetric = dev <= tol
    if strict and not symmetric:
        raise NonSymmetric(f"relative symmetry deviation {dev:.3e} exceeds {tol:.1e}")
    piv = _kernels.symmetric_pivots(np.ascontiguousarray(A))
    min_pivot = float(np.nanmin(piv)) if np.any(np.isfinite(piv)) else float("nan")
    positive = bool(np.all(np.isfinite(piv)) and min_pivot > tol * scale)
    if strict and not positive:
        raise NotPositive(f"smallest pivot {min_pivot:.3e} is not positive (scale {scale:.3e})")
    return SpdDiagnostics(symmetric, dev, min_pivot, positive)


def levinson_y(G: BlockToeplitzSPD, rtol: float = PIVOT_RTOL) -> tuple[BlockColumn, np.ndarray]:
    """Solve ``G Y = (O, ..., O, I)'`` by the block Levinson recursion.

    Starts from ``Q_0 = I``. At step ``k`` the auxiliary blocks
    ``E_k = sum_l gamma_{l+1} Yt_l`` and ``F_k = -Q_{k-1} E_k`` give the next
    normalizer ``Q_k = (I - F_k^2)^{-1} Q_{k-1}``; the unnormalized column is
    updated by a reversed-shift combination and ``Y^{(k)} = Yt^{(k)} Q_k``.

    Returns
    -------
    Y : BlockColumn
    Q : ndarray, shape (N, M, M)
        Normalizing factors ``Q_0, ..., Q_{N-1}``.
    """
    G = _as_btoeplitz(G)
    gamma = np.ascontiguousarray(G.blocks)
    y, qs, status = _kernels.levinson(gamma, rtol)
    if status == -1:
        raise SingularIntermediate("gamma_0 is numerically singular")
    if status < 0:
        k = -status - 1
        raise SingularIntermediate(f"I - F_k^2 is numerically singular at k={k}")
    if not np.all(np.isfinite(y)):
        raise SingularIntermediate("non-finite values in the Levinson recursion")
    return BlockColumn(y, qs), qs


def _corner_inverse(Y: BlockColumn, rtol: float = PIVOT_RTOL) -> np.ndarray:
    z = np.empty((Y.M, Y.M))
    if not _kernels.block_inverse(np.ascontiguousarray(Y.blocks[-1]), z, rtol):
        raise SingularCorner("Y_{N-1} is numerically singular")
    return z


def invert_from_y(Y: BlockColumn, M: int | None = None, N: int | None = None) -> np.ndarray:
    """Rebuild ``G^{-1}`` from the last block column of the inverse.

    ``G^{-1} = L1 Z U1 - L2 Z U2`` with ``Z = Y_{N-1}^{-1}``, ``L1``/``L2``
    block lower-triangular Toeplitz with first columns
    ``(Y_{N-1}, ..., Y_0)`` and ``(O, Y_0, ..., Y_{N-2})``, and ``U1``/``U2``
    the corresponding upper factors built from the transposed blocks
    (the row solution of a symmetric system is ``Y^T``).
    """
    if not isinstance(Y, BlockColumn):
        Y = BlockColumn(np.asarray(Y, dtype=float).reshape(N, M, M))
    if (M is not None and M != Y.M) or (N is not None and N != Y.N):
        raise ValueError(f"Y has M={Y.M}, N={Y.N}; expected M={M}, N={N}")
    z = _corner_inverse(Y)
    return _kernels.gs_inverse(np.ascontiguousarray(Y.blocks), z)


def solve_row(G: BlockToeplitzSPD, B, Y: BlockColumn | None = None) -> np.ndarray:
    """Solve ``C G = B`` for a row (or a stack of rows) ``B``.

    The inverse is applied as four triangular block-Toeplitz products, so
    memory stays O(M^2 N). Pass a precomputed ``Y`` to skip the recursion.
    """
    G = _as_btoeplitz(G)
    B = np.asarray(B, dtype=float)
    rows = np.atleast_2d(B)
    if rows.shape[-1] != G.size:
        raise ValueError(f"row length {rows.shape[-1]} != MN = {G.size}")
    if Y is None:
        Y, _ = levinson_y(G)
    z = _corner_inverse(Y)
    out = _kernels.gs_apply_rows(np.ascontiguousarray(rows), np.ascontiguousarray(Y.blocks), z)
    return out.reshape(B.shape)


def dense_oracle_solve(A, rhs, rtol: float = 1e-14, return_info: bool = False):
    """Reference solve of ``A X = rhs`` by Gaussian elimination.

    Rows are swapped for partial pivoting; on symmetric positive definite
    input no swap is ever needed and the process is plain symmetric
    elimination. With ``return_info`` a dict holding the smallest pivot
    magnitude and the number of swaps is returned too.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    R = np.asarray(rhs, dtype=float)
    vec = R.ndim == 1
    R2 = R.reshape(-1, 1) if vec else R
    if R2.shape[0] != A.shape[0]:
        raise ValueError("rhs rows must match A")
    x, min_piv, swaps, status = _kernels.gauss_solve(
        np.ascontiguousarray(A), np.ascontiguousarray(R2), rtol
    )
    if status < 0:
        raise Singular(f"pivot {min_piv:.3e} collapsed at column {-status - 1}")
    x = x.ravel() if vec else x
    if return_info:
        return x, {"min_abs_pivot": float(min_piv), "swaps": int(swaps)}
    return x


def dense_inverse(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return dense_oracle_solve(A, np.eye(A.shape[0]))


def random_spd_block_toeplitz(M: int, N: int, rng=None, decay: float = 0.6, margin: float = 0.5) -> BlockToeplitzSPD:
    """Random symmetric-block SPD block-Toeplitz matrix for testing.

    Off-diagonal blocks decay geometrically; ``gamma_0`` is shifted so the
    smallest eigenvalue of the expansion equals ``margin``.
    """
    rng = np.random.default_rng(rng)
    a = rng.standard_normal((N, M, M))
    blocks = 0.5 * (a + a.transpose(0, 2, 1)) * decay ** np.arange(N)[:, None, None]
    lam = np.linalg.eigvalsh(expand_dense(BlockToeplitzSPD(blocks)))[0]
    blocks[0] += (margin - lam) * np.eye(M)
    return BlockToeplitzSPD(blocks)


# -- import / export -------------------------------------------------------

_HEADER = struct.Struct("<QQQ")


def save_csv(path, matrix) -> None:
    """Row-major CSV, one line per matrix row, round-trip exact.

    A :class:`BlockToeplitzSPD` is written as its stacked blocks, an
    ``MN x M`` matrix.
    """
    if isinstance(matrix, BlockToeplitzSPD):
        matrix = matrix.blocks.reshape(-1, matrix.M)
    arr = np.atleast_2d(np.asarray(matrix, dtype=float))
    np.savetxt(path, arr, delimiter=",", fmt="%.17g")


def load_csv(path, block_toeplitz: bool = False):
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    if block_toeplitz:
        m = arr.shape[1]
        if arr.shape[0] % m:
            raise ValueError("row count is not a multiple of the block size")
        return BlockToeplitzSPD(arr.reshape(-1, m, m))
    return arr


def save_binary(path, G: BlockToeplitzSPD) -> None:
    """Little-endian layout: three uint64 (M, N, block count) then float64 blocks."""
    G = _as_btoeplitz(G)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(G.M, G.N, G.N))
        fh.write(np.ascontiguousarray(G.blocks, dtype="<f8").tobytes())


def load_binary(path) -> BlockToeplitzSPD:
    data = Path(path).read_bytes()
    m, n, count = _HEADER.unpack_from(data)
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != count * m * m:
        raise ValueError(f"expected {count * m * m} values, found {body.size}")
    return BlockToeplitzSPD(body.reshape(count, m, m).astype(float))
