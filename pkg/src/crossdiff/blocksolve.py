"""2x2-block tridiagonal LU factorisation and solves.

The banded path runs the block Thomas recurrence

    Bbar_1 = B_1,   Bbar_j Ubar_j = U_j,   Bbar_{j+1} = B_{j+1} - L_j Ubar_j

with the forward elimination fused into the same pass, then back substitution.
No pivoting is done; a numerically singular ``Bbar_j`` raises
:class:`FactorizationError`.  :func:`dense_solve` is the pivoted LAPACK oracle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _kernels

DENSE_CAP = 20_000


class FactorizationError(ArithmeticError):
    """A pivot block of the block LU recurrence is numerically singular."""

    def __init__(self, block: int, line: int | None = None, direction: int | None = None):
        self.block = block
        self.line = line
        self.direction = direction
        where = f"block {block}"
        if line is not None:
            where += f" of line {line}"
        if direction is not None:
            where += f" in direction {direction}"
        super().__init__(f"singular pivot at {where}")


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def spectral_norm_2x2(B) -> float:
    """Largest singular value from the closed-form eigenvalues of ``B^T B``."""
    B = np.asarray(B, dtype=np.float64).reshape(1, 2, 2)
    return float(_kernels.spectral_norms(B)[0])


def _as_blocks(a, count: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (count, 2, 2):
        raise ValueError(f"{name} must have shape ({count}, 2, 2), got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} has non-finite entries")
    return a


@dataclass
class BlockTridiagonalMatrix:
    """``diag[j]`` = B_j, ``upper[j]`` = U_j (row j), ``lower[j]`` = L_j (row j + 1)."""

    diag: np.ndarray
    upper: np.ndarray
    lower: np.ndarray

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=np.float64)
        n = self.diag.shape[0]
        if n < 1:
            raise ValueError("need at least one block")
        self.diag = _as_blocks(self.diag, n, "diag")
        self.upper = _as_blocks(np.asarray(self.upper).reshape(-1, 2, 2), n - 1, "upper")
        self.lower = _as_blocks(np.asarray(self.lower).reshape(-1, 2, 2), n - 1, "lower")

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    def to_dense(self) -> np.ndarray:
        n = self.n
        M = np.zeros((2 * n, 2 * n))
        for j in range(n):
            M[2 * j:2 * j + 2, 2 * j:2 * j + 2] = self.diag[j]
        for j in range(n - 1):
            M[2 * j:2 * j + 2, 2 * j + 2:2 * j + 4] = self.upper[j]
            M[2 * j + 2:2 * j + 4, 2 * j:2 * j + 2] = self.lower[j]
        return M

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(self.n, 2)
        y = np.einsum("jpq,jq->jp", self.diag, x)
        y[:-1] += np.einsum("jpq,jq->jp", self.upper, x[1:])
        y[1:] += np.einsum("jpq,jq->jp", self.lower, x[:-1])
        return y.ravel()

    def norm_inf(self) -> float:
        return float(np.abs(self.to_dense()).sum(axis=1).max())


@dataclass
class BlockLUFactors:
    diag_bar: np.ndarray
    upper_bar: np.ndarray
    lower: np.ndarray

    @property
    def n(self) -> int:
        return self.diag_bar.shape[0]

    def lower_dense(self) -> np.ndarray:
        return BlockTridiagonalMatrix(self.diag_bar, np.zeros_like(self.upper_bar), self.lower).to_dense()

    def upper_dense(self) -> np.ndarray:
        eye = np.broadcast_to(np.eye(2), (self.n, 2, 2))
        return BlockTridiagonalMatrix(eye, self.upper_bar, np.zeros_like(self.lower)).to_dense()

    def reconstruct(self) -> np.ndarray:
        return self.lower_dense() @ self.upper_dense()


@dataclass
class FactorizationDiagnostics:
    upper_bar_norms: np.ndarray  # ||Bbar_j^{-1} U_j||_2 per j
    growth_ratio: float  # block-norm estimate of ||L|| ||U|| / ||A||

    @property
    def max_upper_bar_norm(self) -> float:
        return float(self.upper_bar_norms.max()) if self.upper_bar_norms.size else 0.0

    def growth_bound(self, n: int) -> float:
        return float((2 * n - 1) ** 2)


def _growth_ratio(A: BlockTridiagonalMatrix, diag_bar, upper_bar) -> float:
    # a block-bidiagonal matrix is the sum of two block-diagonal ones, so its
    # 2-norm is at most the sum of the largest block norms; ||A|| is at least
    # its largest block norm
    norms = _kernels.spectral_norms
    lower_norm = norms(diag_bar).max() + (norms(A.lower).max() if A.n > 1 else 0.0)
    upper_norm = 1.0 + (norms(upper_bar).max() if A.n > 1 else 0.0)
    a_norm = norms(A.diag).max()
    if A.n > 1:
        a_norm = max(a_norm, norms(A.upper).max(), norms(A.lower).max())
    if a_norm == 0.0:
        return float("inf")
    return float(lower_norm * upper_norm / a_norm)


def block_lu_factor(A: BlockTridiagonalMatrix) -> tuple[BlockLUFactors, FactorizationDiagnostics]:
    n = A.n
    diag_bar = np.empty((n, 2, 2))
    upper_bar = np.empty((n - 1, 2, 2))
    status = _kernels.factor_line(A.diag, A.upper, A.lower, diag_bar, upper_bar)
    if status >= 0:
        raise FactorizationError(status)
    factors = BlockLUFactors(diag_bar, upper_bar, A.lower.copy())
    diagnostics = FactorizationDiagnostics(
        _kernels.spectral_norms(upper_bar), _growth_ratio(A, diag_bar, upper_bar)
    )
    return factors, diagnostics


def solve_factored(factors: BlockLUFactors, rhs) -> np.ndarray:
    """Forward and back substitution with stored factors."""
    n = factors.n
    b = np.asarray(rhs, dtype=np.float64).reshape(n, 2)
    y = np.empty((n, 2))
    y[0] = np.linalg.solve(factors.diag_bar[0], b[0])
    for j in range(1, n):
        y[j] = np.linalg.solve(factors.diag_bar[j], b[j] - factors.lower[j - 1] @ y[j - 1])
    x = y
    for j in range(n - 2, -1, -1):
        x[j] = y[j] - factors.upper_bar[j] @ x[j + 1]
    return x.ravel()


def block_lu_solve(A: BlockTridiagonalMatrix, rhs) -> np.ndarray:
    """Single-pass factor-and-eliminate solve of ``A x = rhs``."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.size != 2 * A.n:
        raise ValueError(f"rhs length {rhs.size} does not match 2 * {A.n}")
    x = solve_batched(A.diag[None], A.upper[None], A.lower[None], rhs.reshape(1, A.n, 2))
    return x[0].ravel()


def solve_batched(diag, upper, lower, rhs, parallel: bool = False, direction: int | None = None) -> np.ndarray:
    """Solve independent block-tridiagonal lines; see :mod:`crossdiff._kernels` for layout."""
    kernel = _kernels.solve_lines_parallel if parallel else _kernels.solve_lines
    x, status = kernel(
        np.ascontiguousarray(diag), np.ascontiguousarray(upper),
        np.ascontiguousarray(lower), np.ascontiguousarray(rhs),
    )
    bad = np.flatnonzero(status >= 0)
    if bad.size:
        line = int(bad[0])
        raise FactorizationError(int(status[line]), line=line, direction=direction)
    return x


def dense_solve(M, b, cap: int = DENSE_CAP, check_residual: bool = True,
                overwrite: bool = False) -> np.ndarray:
    """LU with partial pivoting (LAPACK ``getrf``/``getrs``).

    ``overwrite`` lets LAPACK factor ``M`` in place (saves a copy on large
    systems); the residual check is skipped then.
    """
    M = np.asarray(M, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    if M.shape[0] > cap:
        raise ValueError(f"dense oracle limited to {cap} unknowns, got {M.shape[0]}")
    with np.errstate(all="ignore"), warnings.catch_warnings():
        # singularity is reported below with our own exception
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        scale = max(1.0, float(np.abs(M).max()))
        lu, piv = scipy.linalg.lu_factor(M, overwrite_a=overwrite, check_finite=True)
    diag = np.abs(np.diag(lu))
    if diag.min() <= np.finfo(float).eps * scale * M.shape[0]:
        raise SingularMatrixError(f"matrix is singular to working precision (pivot {int(diag.argmin())})")
    x = scipy.linalg.lu_solve((lu, piv), b)
    if check_residual and not overwrite:
        res = np.abs(M @ x - b).max()
        scale = np.abs(M).sum(axis=1).max() * np.abs(x).max() + np.abs(b).max()
        if not res <= 1e-8 * max(scale, np.finfo(float).tiny):
            raise SingularMatrixError(f"residual {res:.3e} too large; matrix is ill-conditioned")
    return x


def lemma1_quantities(A: BlockTridiagonalMatrix) -> tuple[float, np.ndarray]:
    """``||B_1^{-1} U_1||`` and, per block row, ``||B_j^{-1} U_j|| + ||B_j^{-1} L_{j-1}||``.

    Missing off-diagonal blocks at the ends count as zero.
    """
    n = A.n
    inv = np.linalg.inv(A.diag)
    up = np.zeros((n, 2, 2))
    lo = np.zeros((n, 2, 2))
    up[:-1] = A.upper
    lo[1:] = A.lower
    nu = _kernels.spectral_norms(np.einsum("jpq,jqr->jpr", inv, up))
    nl = _kernels.spectral_norms(np.einsum("jpq,jqr->jpr", inv, lo))
    return float(nu[0]), nu + nl


def satisfies_lemma1(A: BlockTridiagonalMatrix, tol: float = 1e-12) -> bool:
    first, sums = lemma1_quantities(A)
    if np.any(np.abs(np.linalg.det(A.diag)) == 0):
        return False
    return first < 1.0 and bool(np.all(sums <= 1.0 + tol))
