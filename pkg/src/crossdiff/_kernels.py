"""Compiled inner loops for 2x2-block tridiagonal systems.

Array layout for a batch of ``L`` independent lines with ``n`` blocks each::

    diag  (L, n,     2, 2)   B_j
    upper (L, n - 1, 2, 2)   U_j, block row j, column j + 1
    lower (L, n - 1, 2, 2)   L_j, block row j + 1, column j
    rhs   (L, n,     2)

The returned status is ``-1`` for a line that solved, otherwise the 0-based
block index whose pivot block was numerically singular.
"""

import numpy as np
from numba import njit, prange

SINGULAR_RTOL = 1e-14


@njit(cache=True, inline="always")
def _pivot_ok(a, b, c, d, det):
    s1 = abs(a) + abs(b)
    s2 = abs(c) + abs(d)
    scale = max(1.0, max(s1, s2) ** 2)
    return abs(det) > SINGULAR_RTOL * scale


@njit(cache=True)
def _solve_one(B, Up, Lo, rhs, x, Ubar, y):
    n = B.shape[0]
    # Bbar_0 = B_0
    a = B[0, 0, 0]
    b = B[0, 0, 1]
    c = B[0, 1, 0]
    d = B[0, 1, 1]
    det = a * d - b * c
    if not _pivot_ok(a, b, c, d, det):
        return 0
    r0 = rhs[0, 0]
    r1 = rhs[0, 1]
    y[0, 0] = (d * r0 - b * r1) / det
    y[0, 1] = (a * r1 - c * r0) / det
    for k in range(1, n):
        # Ubar_{k-1} = Bbar_{k-1}^{-1} U_{k-1}, using the adjugate of (a b; c d)
        u00 = Up[k - 1, 0, 0]
        u01 = Up[k - 1, 0, 1]
        u10 = Up[k - 1, 1, 0]
        u11 = Up[k - 1, 1, 1]
        w00 = (d * u00 - b * u10) / det
        w01 = (d * u01 - b * u11) / det
        w10 = (a * u10 - c * u00) / det
        w11 = (a * u11 - c * u01) / det
        Ubar[k - 1, 0, 0] = w00
        Ubar[k - 1, 0, 1] = w01
        Ubar[k - 1, 1, 0] = w10
        Ubar[k - 1, 1, 1] = w11
        l00 = Lo[k - 1, 0, 0]
        l01 = Lo[k - 1, 0, 1]
        l10 = Lo[k - 1, 1, 0]
        l11 = Lo[k - 1, 1, 1]
        # Bbar_k = B_k - L_{k-1} Ubar_{k-1}
        a = B[k, 0, 0] - (l00 * w00 + l01 * w10)
        b = B[k, 0, 1] - (l00 * w01 + l01 * w11)
        c = B[k, 1, 0] - (l10 * w00 + l11 * w10)
        d = B[k, 1, 1] - (l10 * w01 + l11 * w11)
        det = a * d - b * c
        if not _pivot_ok(a, b, c, d, det):
            return k
        # forward elimination fused with the factorisation
        r0 = rhs[k, 0] - (l00 * y[k - 1, 0] + l01 * y[k - 1, 1])
        r1 = rhs[k, 1] - (l10 * y[k - 1, 0] + l11 * y[k - 1, 1])
        y[k, 0] = (d * r0 - b * r1) / det
        y[k, 1] = (a * r1 - c * r0) / det
    x[n - 1, 0] = y[n - 1, 0]
    x[n - 1, 1] = y[n - 1, 1]
    for k in range(n - 1, 0, -1):
        x0 = x[k, 0]
        x1 = x[k, 1]
        x[k - 1, 0] = y[k - 1, 0] - (Ubar[k - 1, 0, 0] * x0 + Ubar[k - 1, 0, 1] * x1)
        x[k - 1, 1] = y[k - 1, 1] - (Ubar[k - 1, 1, 0] * x0 + Ubar[k - 1, 1, 1] * x1)
    return -1


@njit(cache=True)
def solve_lines(diag, upper, lower, rhs):
    nlines, n = diag.shape[0], diag.shape[1]
    x = np.empty((nlines, n, 2))
    status = np.empty(nlines, dtype=np.int64)
    Ubar = np.empty((max(n - 1, 1), 2, 2))
    y = np.empty((n, 2))
    for i in range(nlines):
        status[i] = _solve_one(diag[i], upper[i], lower[i], rhs[i], x[i], Ubar, y)
    return x, status


@njit(cache=True, parallel=True)
def solve_lines_parallel(diag, upper, lower, rhs):
    nlines, n = diag.shape[0], diag.shape[1]
    x = np.empty((nlines, n, 2))
    status = np.empty(nlines, dtype=np.int64)
    for i in prange(nlines):
        Ubar = np.empty((max(n - 1, 1), 2, 2))
        y = np.empty((n, 2))
        status[i] = _solve_one(diag[i], upper[i], lower[i], rhs[i], x[i], Ubar, y)
    return x, status


@njit(cache=True)
def factor_line(B, Up, Lo, Bbar, Ubar):
    """Block LU recurrence only; fills ``Bbar`` (n,2,2) and ``Ubar`` (n-1,2,2)."""
    n = B.shape[0]
    Bbar[0] = B[0]
    for k in range(1, n + 1):
        a = Bbar[k - 1, 0, 0]
        b = Bbar[k - 1, 0, 1]
        c = Bbar[k - 1, 1, 0]
        d = Bbar[k - 1, 1, 1]
        det = a * d - b * c
        if not _pivot_ok(a, b, c, d, det):
            return k - 1
        if k == n:
            break
        for q in range(2):
            Ubar[k - 1, 0, q] = (d * Up[k - 1, 0, q] - b * Up[k - 1, 1, q]) / det
            Ubar[k - 1, 1, q] = (a * Up[k - 1, 1, q] - c * Up[k - 1, 0, q]) / det
        for p in range(2):
            for q in range(2):
                Bbar[k, p, q] = B[k, p, q] - (Lo[k - 1, p, 0] * Ubar[k - 1, 0, q]
                                              + Lo[k - 1, p, 1] * Ubar[k - 1, 1, q])
    return -1


@njit(cache=True)
def spectral_norms(blocks):
    """Largest singular value of each 2x2 block in a ``(m, 2, 2)`` array."""
    m = blocks.shape[0]
    out = np.empty(m)
    for i in range(m):
        a = blocks[i, 0, 0]
        b = blocks[i, 0, 1]
        c = blocks[i, 1, 0]
        d = blocks[i, 1, 1]
        s = a * a + b * b + c * c + d * d
        det = a * d - b * c
        disc = max(s * s - 4.0 * det * det, 0.0)
        out[i] = np.sqrt(0.5 * (s + np.sqrt(disc)))
    return out
