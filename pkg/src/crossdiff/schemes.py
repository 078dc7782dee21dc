"""Time stepping for the cross-diffusion system.

One directional sweep along axis ``k`` with time scale ``tau`` and reaction
weight ``w`` solves, on every grid line parallel to ``k``,

    (I - theta*tau*A_k + theta*tau*w*Lam) Z_new
        = (I + (1-theta)*tau*A_k - (1-theta)*tau*w*Lam) Z_old + tau*w*Lam Z_anchor

where ``A_k`` is the zero-flux divergence-form operator of direction ``k`` with
coefficients frozen at ``W^m``.  AOS uses ``tau = d*dt``, ``w = 1/d`` from
``W^m`` in every direction and averages; AMOS chains sweeps with ``tau = dt``,
``w = 1/d`` over every direction order and averages the chains.  Unknowns of
one line are interleaved ``(U_0, V_0, U_1, V_1, ...)`` so the line matrix is
2x2-block tridiagonal.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .blocksolve import (
    BlockTridiagonalMatrix,
    FactorizationError,
    dense_solve,
    solve_batched,
)
from .grid import Grid, StateW, delta_half, delta_node, norm_W
from .model import NO_REACTION, EvaluatedCoefficients, InfluenceModel, ReactionModel, evaluate_coefficients

SCHEMES = ("full", "aos", "amos")
SOLVERS = ("dense", "banded")

_SCHEME_ALIASES = {"fulltheta": "full", "full_theta": "full", "theta": "full", "full": "full",
                   "aos": "aos", "aos-cd": "aos", "amos": "amos", "amos-cd": "amos"}
_SOLVER_ALIASES = {"dense": "dense", "denseoracle": "dense", "dense_oracle": "dense",
                   "banded": "banded", "blockbanded": "banded", "block_banded": "banded"}


class DivergenceError(FloatingPointError):
    """A step produced non-finite values."""


@dataclass
class SchemeConfig:
    theta: float = 1.0
    dt: float = 0.1
    scheme: str = "aos"
    solver: str = "banded"
    steps: int = 1
    parallel: bool = False
    check_residual: bool = True

    def __post_init__(self):
        self.scheme = _SCHEME_ALIASES.get(str(self.scheme).lower(), self.scheme)
        self.solver = _SOLVER_ALIASES.get(str(self.solver).lower(), self.solver)
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.scheme == "full" and self.solver == "banded":
            raise ValueError("the full theta-method matrix is not block tridiagonal; use solver='dense'")

    @property
    def r(self) -> float:
        """Coupling scale of the line matrices: ``2*theta*dt`` (AOS), ``theta*dt`` (AMOS)."""
        if self.scheme == "aos":
            return 2.0 * self.theta * self.dt
        return self.theta * self.dt

    def r_for(self, dim: int) -> float:
        return (dim if self.scheme == "aos" else 1) * self.theta * self.dt


@dataclass
class StepReport:
    state: StateW
    norm_before: float
    norm_after: float
    systems_solved: int = 0
    wall_time: float = 0.0
    residual_max: float = 0.0


@dataclass
class DirectionalSystem:
    direction: int
    line: tuple[int, ...]
    matrix: BlockTridiagonalMatrix
    rhs: np.ndarray  # interleaved, length 2n


@dataclass
class _Batch:
    """All lines of one direction: blocks ``(L, n, 2, 2)`` and rhs ``(L, n, 2)``."""

    direction: int
    diag: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    rhs: np.ndarray
    line_shape: tuple[int, ...] = field(default=())


# -- operators -------------------------------------------------------------

def apply_direction(Z: np.ndarray, half: np.ndarray, grid: Grid, k: int) -> np.ndarray:
    """``A_k Z`` for stacked ``Z`` of shape ``(2, *shape)``."""
    dU = delta_half(Z[0], grid, k)
    dV = delta_half(Z[1], grid, k)
    d1, d2, d3, d4 = half
    return np.stack([delta_node(d1 * dU + d2 * dV, grid, k),
                     delta_node(d3 * dU + d4 * dV, grid, k)])


def apply_operator(Z: np.ndarray, coeffs: EvaluatedCoefficients, grid: Grid) -> np.ndarray:
    return sum(apply_direction(Z, coeffs.half[k], grid, k) for k in range(grid.dim))


def _to_lines(a: np.ndarray, k: int) -> np.ndarray:
    """Move axis ``k`` of a grid-shaped array last and flatten the rest into lines."""
    a = np.moveaxis(a, k, -1)
    return a.reshape(-1, a.shape[-1])


def _from_lines(lines: np.ndarray, shape: tuple[int, ...], k: int) -> np.ndarray:
    moved = tuple(s for i, s in enumerate(shape) if i != k) + (shape[k],)
    return np.moveaxis(lines.reshape(moved), -1, k)


def _assemble_batch(Z_old, anchor, coeffs: EvaluatedCoefficients, grid: Grid, k: int,
                    tau: float, theta: float, weight: float) -> _Batch:
    n = grid.shape[k]
    h2 = grid.spacing[k] ** 2
    half = coeffs.half[k]
    a = theta * tau / h2
    # e[line, p] is the 2x2 coupling at half-point p + 1/2
    e = np.stack([_to_lines(half[ell], k) for ell in range(4)], axis=-1) * a
    e = e.reshape(e.shape[0], n - 1, 2, 2)
    nlines = e.shape[0]
    s = np.ones(n)
    s[0] = s[-1] = 2.0
    diag = np.zeros((nlines, n, 2, 2))
    diag[:, :, 0, 0] = 1.0
    diag[:, :, 1, 1] = 1.0
    diag[:, :-1] += s[:-1, None, None] * e
    diag[:, 1:] += s[1:, None, None] * e
    react = theta * tau * weight
    lam1 = _to_lines(coeffs.lam1, k)
    lam2 = _to_lines(coeffs.lam2, k)
    diag[:, :, 0, 0] += react * lam1
    diag[:, :, 1, 1] += react * lam2
    upper = -s[:-1, None, None] * e
    lower = -s[1:, None, None] * e

    rhs_grid = Z_old.copy()
    if theta < 1.0:
        rhs_grid += (1.0 - theta) * tau * apply_direction(Z_old, half, grid, k)
    lam = np.stack([coeffs.lam1, coeffs.lam2])
    rhs_grid += tau * weight * lam * (anchor - (1.0 - theta) * Z_old)
    rhs = np.stack([_to_lines(rhs_grid[0], k), _to_lines(rhs_grid[1], k)], axis=-1)
    line_shape = tuple(s_ for i, s_ in enumerate(grid.shape) if i != k)
    return _Batch(k, diag, upper, lower, rhs, line_shape)


def _batch_residual(b: _Batch, x: np.ndarray) -> float:
    y = np.einsum("ljpq,ljq->ljp", b.diag, x)
    y[:, :-1] += np.einsum("ljpq,ljq->ljp", b.upper, x[:, 1:])
    y[:, 1:] += np.einsum("ljpq,ljq->ljp", b.lower, x[:, :-1])
    return float(np.abs(y - b.rhs).max())


class _Counter:
    def __init__(self):
        self.systems = 0
        self.residual = 0.0


def sweep(Z_old, anchor, coeffs: EvaluatedCoefficients, grid: Grid, k: int, tau: float,
          theta: float, weight: float, solver: str = "banded", parallel: bool = False,
          counter: _Counter | None = None, check_residual: bool = False) -> np.ndarray:
    """One implicit fractional step along direction ``k`` on every line."""
    b = _assemble_batch(Z_old, anchor, coeffs, grid, k, tau, theta, weight)
    if theta == 0.0:
        # identity system matrix
        x = b.rhs
    elif solver == "banded":
        x = solve_batched(b.diag, b.upper, b.lower, b.rhs, parallel=parallel, direction=k + 1)
    else:
        x = np.empty_like(b.rhs)
        for i in range(b.rhs.shape[0]):
            M = BlockTridiagonalMatrix(b.diag[i], b.upper[i], b.lower[i]).to_dense()
            try:
                x[i] = dense_solve(M, b.rhs[i].ravel()).reshape(-1, 2)
            except np.linalg.LinAlgError as exc:
                raise FactorizationError(-1, line=i, direction=k + 1) from exc
    if counter is not None:
        counter.systems += b.rhs.shape[0] if theta != 0.0 else 0
        if check_residual and theta != 0.0:
            counter.residual = max(counter.residual, _batch_residual(b, x))
    out = np.empty_like(Z_old)
    out[0] = _from_lines(x[..., 0], grid.shape, k)
    out[1] = _from_lines(x[..., 1], grid.shape, k)
    return out


def line_index(grid: Grid, k: int, line: int) -> tuple[int, ...]:
    shape = tuple(s for i, s in enumerate(grid.shape) if i != k)
    return tuple(int(i) for i in np.unravel_index(line, shape))


def assemble_directional_system(state: StateW, coeffs: EvaluatedCoefficients, k: int,
                                line: tuple[int, ...] | int, tau: float, theta: float,
                                weight: float | None = None, Z_old: np.ndarray | None = None
                                ) -> DirectionalSystem:
    """Block-tridiagonal system of a single line parallel to direction ``k``.

    ``line`` holds the fixed indices of the other axes (in axis order).  The
    stage input ``Z_old`` defaults to the state itself.
    """
    grid = state.grid
    weight = 1.0 / grid.dim if weight is None else weight
    Z_old = state.W if Z_old is None else Z_old
    b = _assemble_batch(Z_old, state.W0, coeffs, grid, k, tau, theta, weight)
    shape = tuple(s for i, s in enumerate(grid.shape) if i != k)
    if isinstance(line, (int, np.integer)):
        flat = int(line)
    else:
        flat = int(np.ravel_multi_index(tuple(line), shape))
    return DirectionalSystem(
        k, line_index(grid, k, flat),
        BlockTridiagonalMatrix(b.diag[flat], b.upper[flat], b.lower[flat]),
        b.rhs[flat].ravel(),
    )


def sweep_parameters(config: SchemeConfig, dim: int) -> tuple[float, float]:
    """``(tau, weight)`` of the directional sweeps: time scale and reaction share."""
    if config.scheme == "aos":
        return dim * config.dt, 1.0 / dim
    if config.scheme == "amos":
        return config.dt, 1.0 / dim
    raise ValueError("the full theta-method has no directional sweeps")


def directional_matrices(state: StateW, coeffs: EvaluatedCoefficients, config: SchemeConfig):
    """Yield ``(k, line, matrix)`` for every line system a split step solves.

    The matrices do not depend on the stage input, so AMOS stages share them.
    """
    grid = state.grid
    tau, weight = sweep_parameters(config, grid.dim)
    for k in range(grid.dim):
        b = _assemble_batch(state.W, state.W0, coeffs, grid, k, tau, config.theta, weight)
        for i in range(b.diag.shape[0]):
            yield k, i, BlockTridiagonalMatrix(b.diag[i], b.upper[i], b.lower[i])


# -- full matrix (oracle path) ---------------------------------------------

def _difference_1d(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr") / h


def _kron_axis(grid_shape, k: int, op) -> sp.csr_matrix:
    # canonical ordering runs axis 0 fastest, so it is the right-most factor
    mats = [op if i == k else sp.identity(n, format="csr") for i, n in enumerate(grid_shape)]
    out = mats[-1]
    for m in reversed(mats[:-1]):
        out = sp.kron(out, m, format="csr")
    return out


def assemble_full_matrix(coeffs: EvaluatedCoefficients, grid: Grid) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """``(A, Lam)`` in the ordering ``[U (direction 1 fastest), V]``."""
    N = grid.size
    blocks = [[sp.csr_matrix((N, N)) for _ in range(2)] for _ in range(2)]
    for k in range(grid.dim):
        n = grid.shape[k]
        G1 = _difference_1d(n, grid.spacing[k])
        s = np.ones(n)
        s[0] = s[-1] = 2.0
        G = _kron_axis(grid.shape, k, G1)
        S = _kron_axis(grid.shape, k, sp.diags(s))
        for ell in range(4):
            d = grid.flatten(coeffs.half[k][ell])
            blocks[ell // 2][ell % 2] = blocks[ell // 2][ell % 2] - S @ G.T @ sp.diags(d) @ G
    A = sp.bmat(blocks, format="csr")
    Lam = sp.diags(np.concatenate([grid.flatten(coeffs.lam1), grid.flatten(coeffs.lam2)]), format="csr")
    return A, Lam


def full_theta_system(state: StateW, coeffs: EvaluatedCoefficients, theta: float, dt: float):
    """System matrix and rhs of one full theta-method step."""
    grid = state.grid
    A, Lam = assemble_full_matrix(coeffs, grid)
    I = sp.identity(A.shape[0], format="csr")
    w = np.concatenate([grid.flatten(state.U), grid.flatten(state.V)])
    w0 = np.concatenate([grid.flatten(state.U0), grid.flatten(state.V0)])
    M = I - theta * dt * A + theta * dt * Lam
    rhs = w + (1 - theta) * dt * (A @ w) - (1 - theta) * dt * (Lam @ w) + dt * (Lam @ w0)
    return M.tocsr(), rhs


# -- drivers ---------------------------------------------------------------

def _finish(state, W_new, config_dt, n0, counter, t0) -> StepReport:
    if not np.isfinite(W_new).all():
        raise DivergenceError(f"non-finite values after step at t={state.t:.6g}")
    new = state.evolve(W_new, state.t + config_dt)
    return StepReport(new, n0, norm_W(new), counter.systems, time.perf_counter() - t0, counter.residual)


def _coeffs(state, model, reaction, theta, dt, coeffs):
    if coeffs is not None:
        return coeffs
    return evaluate_coefficients(state, model, reaction, state.t + theta * dt)


def step_explicit(state: StateW, model: InfluenceModel, reaction: ReactionModel = NO_REACTION,
                  dt: float = 0.1, coeffs: EvaluatedCoefficients | None = None) -> StepReport:
    t0 = time.perf_counter()
    if not dt > 0:
        raise ValueError("dt must be positive")
    coeffs = _coeffs(state, model, reaction, 0.0, dt, coeffs)
    W = state.W
    lam = np.stack([coeffs.lam1, coeffs.lam2])
    W_new = W + dt * (apply_operator(W, coeffs, state.grid) - lam * (W - state.W0))
    return _finish(state, W_new, dt, norm_W(state), _Counter(), t0)


def step_full_theta(state: StateW, model: InfluenceModel, reaction: ReactionModel = NO_REACTION,
                    config: SchemeConfig | None = None, coeffs: EvaluatedCoefficients | None = None
                    ) -> StepReport:
    config = config or SchemeConfig(scheme="full", solver="dense")
    if config.scheme != "full":
        raise ValueError("step_full_theta requires scheme='full'")
    if config.theta == 0.0:
        return step_explicit(state, model, reaction, config.dt, coeffs)
    t0 = time.perf_counter()
    coeffs = _coeffs(state, model, reaction, config.theta, config.dt, coeffs)
    M, rhs = full_theta_system(state, coeffs, config.theta, config.dt)
    Md = M.toarray()
    x = dense_solve(Md, rhs)
    counter = _Counter()
    counter.systems = 1
    if config.check_residual:
        counter.residual = float(np.abs(Md @ x - rhs).max())
    N = state.grid.size
    grid = state.grid
    W_new = np.stack([grid.unflatten(x[:N]), grid.unflatten(x[N:])])
    return _finish(state, W_new, config.dt, norm_W(state), counter, t0)


def _average(parts: list[np.ndarray]) -> np.ndarray:
    # offsets from the first part, so identical parts average to themselves exactly
    base = parts[0]
    if len(parts) == 1:
        return base.copy()
    return base + sum(p - base for p in parts[1:]) / len(parts)


def _aos(state, coeffs, config, counter):
    grid = state.grid
    d = grid.dim
    W, W0 = state.W, state.W0
    parts = [sweep(W, W0, coeffs, grid, k, d * config.dt, config.theta, 1.0 / d,
                   config.solver, config.parallel, counter, config.check_residual)
             for k in range(d)]
    return _average(parts)


def amos_chains(dim: int) -> list[tuple[int, ...]]:
    return list(itertools.permutations(range(dim)))


def _amos(state, coeffs, config, counter, orders=None):
    grid = state.grid
    d = grid.dim
    W0 = state.W0
    cache: dict[tuple[int, ...], np.ndarray] = {(): state.W}
    orders = amos_chains(d) if orders is None else orders
    finals = []
    for order in orders:
        for depth in range(1, len(order) + 1):
            prefix = order[:depth]
            if prefix not in cache:
                cache[prefix] = sweep(cache[prefix[:-1]], W0, coeffs, grid, prefix[-1], config.dt,
                                      config.theta, 1.0 / d, config.solver, config.parallel,
                                      counter, config.check_residual)
        finals.append(cache[tuple(order)])
    return _average(finals)


def advance(state: StateW, coeffs: EvaluatedCoefficients, config: SchemeConfig) -> np.ndarray:
    """New ``(2, *shape)`` unknowns for precomputed coefficients (no diagnostics)."""
    counter = _Counter()
    if config.scheme == "aos":
        return _aos(state, coeffs, config, counter)
    if config.scheme == "amos":
        return _amos(state, coeffs, config, counter)
    if config.theta == 0.0:
        lam = np.stack([coeffs.lam1, coeffs.lam2])
        W = state.W
        return W + config.dt * (apply_operator(W, coeffs, state.grid) - lam * (W - state.W0))
    M, rhs = full_theta_system(state, coeffs, config.theta, config.dt)
    x = dense_solve(M.toarray(), rhs, check_residual=False, overwrite=True)
    N = state.grid.size
    return np.stack([state.grid.unflatten(x[:N]), state.grid.unflatten(x[N:])])


def step_aos(state: StateW, model: InfluenceModel, reaction: ReactionModel = NO_REACTION,
             config: SchemeConfig | None = None, coeffs: EvaluatedCoefficients | None = None
             ) -> StepReport:
    config = config or SchemeConfig(scheme="aos")
    if config.scheme != "aos":
        raise ValueError("step_aos requires scheme='aos'")
    t0 = time.perf_counter()
    coeffs = _coeffs(state, model, reaction, config.theta, config.dt, coeffs)
    counter = _Counter()
    W_new = _aos(state, coeffs, config, counter)
    return _finish(state, W_new, config.dt, norm_W(state), counter, t0)


def step_amos(state: StateW, model: InfluenceModel, reaction: ReactionModel = NO_REACTION,
              config: SchemeConfig | None = None, coeffs: EvaluatedCoefficients | None = None,
              orders: list[tuple[int, ...]] | None = None) -> StepReport:
    """AMOS step; ``orders`` restricts the averaged direction orders (default: all)."""
    config = config or SchemeConfig(scheme="amos")
    if config.scheme != "amos":
        raise ValueError("step_amos requires scheme='amos'")
    t0 = time.perf_counter()
    coeffs = _coeffs(state, model, reaction, config.theta, config.dt, coeffs)
    counter = _Counter()
    W_new = _amos(state, coeffs, config, counter, orders)
    return _finish(state, W_new, config.dt, norm_W(state), counter, t0)


def step(state: StateW, model: InfluenceModel, reaction: ReactionModel = NO_REACTION,
         config: SchemeConfig | None = None) -> StepReport:
    config = config or SchemeConfig()
    if config.scheme == "full":
        return step_full_theta(state, model, reaction, config)
    if config.scheme == "aos":
        return step_aos(state, model, reaction, config)
    return step_amos(state, model, reaction, config)


def run(state: StateW, model: InfluenceModel, reaction: ReactionModel = NO_REACTION,
        config: SchemeConfig | None = None, callback=None) -> list[StepReport]:
    config = config or SchemeConfig()
    reports = []
    for m in range(config.steps):
        report = step(state, model, reaction, config)
        reports.append(report)
        state = report.state
        if callback is not None:
            callback(m + 1, report)
    return reports
