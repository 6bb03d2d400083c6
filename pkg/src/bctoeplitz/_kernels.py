"""Compiled inner loops for the block-Toeplitz solver and the dense oracle.

The kernels never raise; they return an integer status and the Python
wrappers in :mod:`bctoeplitz.block_toeplitz` turn it into an exception.
Status codes: 0 ok, otherwise ``-(k+1)`` where ``k`` is the offending step.
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def _matmul(a, b, out):
    m, n = a.shape
    p = b.shape[1]
    for i in range(m):
        for j in range(p):
            s = 0.0
            for r in range(n):
                s += a[i, r] * b[r, j]
            out[i, j] = s


@njit(**_JIT)
def _matmul_acc(a, b, out, sign):
    m, n = a.shape
    p = b.shape[1]
    for i in range(m):
        for j in range(p):
            s = 0.0
            for r in range(n):
                s += a[i, r] * b[r, j]
            out[i, j] += sign * s


@njit(**_JIT)
def block_inverse(a, out, rtol):
    """Gauss-Jordan with partial pivoting; returns False if a pivot collapses."""
    m = a.shape[0]
    w = a.copy()
    for i in range(m):
        for j in range(m):
            out[i, j] = 1.0 if i == j else 0.0
    scale = 0.0
    for i in range(m):
        for j in range(m):
            if abs(w[i, j]) > scale:
                scale = abs(w[i, j])
    if scale == 0.0:
        return False
    for c in range(m):
        p = c
        big = abs(w[c, c])
        for r in range(c + 1, m):
            if abs(w[r, c]) > big:
                big = abs(w[r, c])
                p = r
        if big <= rtol * scale:
            return False
        if p != c:
            for j in range(m):
                t = w[c, j]
                w[c, j] = w[p, j]
                w[p, j] = t
                t = out[c, j]
                out[c, j] = out[p, j]
                out[p, j] = t
        piv = w[c, c]
        for j in range(m):
            w[c, j] /= piv
            out[c, j] /= piv
        for r in range(m):
            if r != c:
                f = w[r, c]
                if f != 0.0:
                    for j in range(m):
                        w[r, j] -= f * w[c, j]
                        out[r, j] -= f * out[c, j]
    return True


@njit(**_JIT)
def levinson(gamma, rtol):
    """Block Levinson recursion for ``G Y = (O, ..., O, I)'``.

    ``gamma`` has shape (N, M, M). Returns ``(Y, Q, status)`` where ``Q[k]``
    is the normalizing factor of step ``k``.
    """
    n, m, _ = gamma.shape
    yt = np.zeros((n, m, m))
    nxt = np.zeros((n, m, m))
    qs = np.zeros((n, m, m))
    y = np.zeros((n, m, m))
    eye = np.eye(m)
    e = np.empty((m, m))
    f = np.empty((m, m))
    a = np.empty((m, m))
    ainv = np.empty((m, m))
    q = eye.copy()
    qs[0] = q
    if not block_inverse(gamma[0], yt[0], rtol):
        return y, qs, -1
    for k in range(1, n):
        e[:, :] = 0.0
        for l in range(k):
            _matmul_acc(gamma[l + 1], yt[l], e, 1.0)
        _matmul(q, e, f)
        f *= -1.0
        _matmul(f, f, a)
        for i in range(m):
            for j in range(m):
                a[i, j] = eye[i, j] - a[i, j]
        if not block_inverse(a, ainv, rtol):
            return y, qs, -(k + 1)
        _matmul(ainv, q, a)
        q[:, :] = a
        qs[k] = q
        for l in range(k + 1):
            nxt[l, :, :] = 0.0
            if l < k:
                _matmul_acc(yt[k - 1 - l], f, nxt[l], 1.0)
            if l >= 1:
                nxt[l] += yt[l - 1]
        for l in range(k + 1):
            yt[l] = nxt[l]
    for l in range(n):
        _matmul(yt[l], q, y[l])
    return y, qs, 0


@njit(**_JIT)
def gs_inverse(y, z):
    """Dense inverse from the last block column ``y`` and ``z = y[-1]^{-1}``.

    Uses the displacement identity ``X[i+1, k+1] = X[i, k] + l1z[i+1] u1[k+1]
    - l2z[i+1] u2[k+1]`` so the cost is O(M^3 N^2).
    """
    n, m, _ = y.shape
    l1z = np.empty((n, m, m))
    l2z = np.zeros((n, m, m))
    u1 = np.empty((n, m, m))
    u2 = np.zeros((n, m, m))
    for s in range(n):
        _matmul(y[n - 1 - s], z, l1z[s])
        u1[s] = y[n - 1 - s].T
        if s >= 1:
            _matmul(y[s - 1], z, l2z[s])
            u2[s] = y[s - 1].T
    res = np.empty((n * m, n * m))
    # first block row and first block column: X[i, k] = l1z[i] u1[k]
    for i in range(n):
        for k in range(n):
            if i > 0 and k > 0:
                continue
            for a in range(m):
                for b in range(m):
                    acc = 0.0
                    for c in range(m):
                        acc += l1z[i, a, c] * u1[k, c, b]
                    res[i * m + a, k * m + b] = acc
    for i in range(1, n):
        for a in range(m):
            r = i * m + a
            for k in range(1, n):
                for b in range(m):
                    acc = res[r - m, k * m + b - m]
                    for c in range(m):
                        acc += l1z[i, a, c] * u1[k, c, b] - l2z[i, a, c] * u2[k, c, b]
                    res[r, k * m + b] = acc
    return res


@njit(**_JIT)
def gs_apply_rows(rows, y, z):
    """``rows @ G^{-1}`` through the four triangular block-Toeplitz factors.

    ``rows`` has shape (R, N*M). Never forms the dense inverse.
    """
    n, m, _ = y.shape
    nr = rows.shape[0]
    out = np.zeros((nr, n * m))
    v = np.zeros((n, m))
    w = np.zeros((n, m))
    for r in range(nr):
        b = rows[r].reshape((n, m))
        # first term: b L1 Z U1, L1[s] = y[n-1-s], U1[s] = y[n-1-s]^T
        for k in range(n):
            for q in range(m):
                acc = 0.0
                for i in range(k, n):
                    blk = y[n - 1 - (i - k)]
                    for p in range(m):
                        acc += b[i, p] * blk[p, q]
                v[k, q] = acc
        for k in range(n):
            for q in range(m):
                acc = 0.0
                for p in range(m):
                    acc += v[k, p] * z[p, q]
                w[k, q] = acc
        res = out[r].reshape((n, m))
        for k in range(n):
            for q in range(m):
                acc = 0.0
                for i in range(k + 1):
                    blk = y[n - 1 - (k - i)]
                    for p in range(m):
                        acc += w[i, p] * blk[q, p]
                res[k, q] += acc
        # second term: b L2 Z U2, L2[s] = y[s-1], U2[s] = y[s-1]^T (s >= 1)
        for k in range(n):
            for q in range(m):
                acc = 0.0
                for i in range(k + 1, n):
                    blk = y[i - k - 1]
                    for p in range(m):
                        acc += b[i, p] * blk[p, q]
                v[k, q] = acc
        for k in range(n):
            for q in range(m):
                acc = 0.0
                for p in range(m):
                    acc += v[k, p] * z[p, q]
                w[k, q] = acc
        for k in range(n):
            for q in range(m):
                acc = 0.0
                for i in range(k):
                    blk = y[k - i - 1]
                    for p in range(m):
                        acc += w[i, p] * blk[q, p]
                res[k, q] -= acc
    return out


@njit(**_JIT)
def gauss_solve(a, rhs, rtol):
    """Gaussian elimination with partial pivoting.

    Returns ``(x, min_abs_pivot, swaps, status)``.
    """
    n = a.shape[0]
    w = a.copy()
    x = rhs.copy()
    ncol = x.shape[1]
    scale = 0.0
    for i in range(n):
        for j in range(n):
            if abs(w[i, j]) > scale:
                scale = abs(w[i, j])
    min_piv = np.inf
    swaps = 0
    if scale == 0.0:
        return x, 0.0, swaps, -1
    for c in range(n):
        p = c
        big = abs(w[c, c])
        for r in range(c + 1, n):
            if abs(w[r, c]) > big:
                big = abs(w[r, c])
                p = r
        if big < min_piv:
            min_piv = big
        if big <= rtol * scale:
            return x, big, swaps, -(c + 1)
        if p != c:
            swaps += 1
            for j in range(n):
                t = w[c, j]
                w[c, j] = w[p, j]
                w[p, j] = t
            for j in range(ncol):
                t = x[c, j]
                x[c, j] = x[p, j]
                x[p, j] = t
        piv = w[c, c]
        for r in range(c + 1, n):
            f = w[r, c] / piv
            if f != 0.0:
                for j in range(c + 1, n):
                    w[r, j] -= f * w[c, j]
                for j in range(ncol):
                    x[r, j] -= f * x[c, j]
            w[r, c] = 0.0
    for c in range(n - 1, -1, -1):
        for j in range(ncol):
            s = x[c, j]
            for r in range(c + 1, n):
                s -= w[c, r] * x[r, j]
            x[c, j] = s / w[c, c]
    return x, min_piv, swaps, 0


@njit(**_JIT)
def symmetric_pivots(a):
    """Pivots of unpivoted symmetric elimination (the D of ``L D L^T``)."""
    n = a.shape[0]
    w = a.copy()
    piv = np.empty(n)
    for c in range(n):
        d = w[c, c]
        piv[c] = d
        if d == 0.0:
            for r in range(c + 1, n):
                piv[r] = np.nan
            return piv
        for r in range(c + 1, n):
            f = w[r, c] / d
            if f != 0.0:
                for j in range(c + 1, n):
                    w[r, j] -= f * w[c, j]
    return piv
