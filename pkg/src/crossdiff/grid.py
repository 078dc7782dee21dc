"""Rectangular meshes, difference quotients and discrete inner products.

Fields are plain ``numpy`` arrays of shape ``grid.shape`` indexed as
``Z[j1, j2]`` (or ``Z[j1, j2, j3]``).  The canonical flat ordering, used for
assembled matrices and the XDIF file format, runs direction 1 fastest, which is
``Z.ravel(order="F")``.

Half-point fields along direction ``k`` have ``N_k`` entries on axis ``k``
(one per interior edge) and ``n_l`` entries on every other axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class GridMismatchError(ValueError):
    """Raised when fields defined on different grids are combined."""


@dataclass(frozen=True)
class Grid:
    """Uniform tensor mesh on ``prod_k [lower_k, upper_k]`` with ``N_k`` cells per axis.

    Node indices run over ``0..N_k`` so each axis carries ``N_k + 1`` nodes.
    """

    cells: tuple[int, ...]
    lower: tuple[float, ...] = None
    upper: tuple[float, ...] = None

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        if len(cells) not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {len(cells)}")
        if any(c < 1 for c in cells):
            raise ValueError(f"every axis needs at least one cell, got {cells}")
        lower = (0.0,) * len(cells) if self.lower is None else tuple(map(float, self.lower))
        upper = (1.0,) * len(cells) if self.upper is None else tuple(map(float, self.upper))
        if len(lower) != len(cells) or len(upper) != len(cells):
            raise ValueError("bounds must have one entry per axis")
        for k, (a, b) in enumerate(zip(lower, upper)):
            if not b > a:
                raise ValueError(f"axis {k + 1}: upper bound {b} must exceed lower bound {a}")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def square(cls, n_cells: int, dim: int = 2, length: float = 1.0) -> Grid:
        return cls((n_cells,) * dim, (0.0,) * dim, (length,) * dim)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        """Node counts ``n_k = N_k + 1``."""
        return tuple(c + 1 for c in self.cells)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / c for a, b, c in zip(self.lower, self.upper, self.cells))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def volume(self) -> float:
        return float(np.prod([b - a for a, b in zip(self.lower, self.upper)]))

    def axis(self, k: int) -> np.ndarray:
        """Node coordinates along axis ``k`` (0-based)."""
        return self.lower[k] + self.spacing[k] * np.arange(self.shape[k])

    def coordinates(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis(k) for k in range(self.dim)], indexing="ij")

    def half_shape(self, k: int) -> tuple[int, ...]:
        shape = list(self.shape)
        shape[k] = self.cells[k]
        return tuple(shape)

    def axis_weights(self, k: int) -> np.ndarray:
        """1D trapezoid weights: ``h_k`` inside, ``h_k / 2`` at both ends."""
        w = np.full(self.shape[k], self.spacing[k])
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Quadrature weight of every node, i.e. the corner rule summed over cells."""
        w = self.axis_weights(0)
        for k in range(1, self.dim):
            w = np.multiply.outer(w, self.axis_weights(k))
        return w

    def half_weights(self, k: int) -> np.ndarray:
        """Weights of the edge-midpoint product along direction ``k``."""
        factors = [
            np.full(self.cells[k], self.spacing[k]) if ell == k else self.axis_weights(ell)
            for ell in range(self.dim)
        ]
        w = factors[0]
        for f in factors[1:]:
            w = np.multiply.outer(w, f)
        return w

    def check_field(self, values: np.ndarray, name: str = "field") -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.shape:
            raise GridMismatchError(f"{name} has shape {values.shape}, grid expects {self.shape}")
        return values

    def flatten(self, values: np.ndarray) -> np.ndarray:
        """Canonical ordering (direction 1 fastest)."""
        return np.asarray(values).ravel(order="F")

    def unflatten(self, flat: np.ndarray) -> np.ndarray:
        return np.asarray(flat, dtype=np.float64).reshape(self.shape, order="F")


@dataclass
class StateW:
    """Two-component field ``(U, V)`` at time ``t`` with its anchor ``(U0, V0)``."""

    grid: Grid
    U: np.ndarray
    V: np.ndarray
    t: float = 0.0
    U0: np.ndarray = field(default=None, repr=False)
    V0: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.U = self.grid.check_field(self.U, "U")
        self.V = self.grid.check_field(self.V, "V")
        self.U0 = self.U.copy() if self.U0 is None else self.grid.check_field(self.U0, "U0")
        self.V0 = self.V.copy() if self.V0 is None else self.grid.check_field(self.V0, "V0")

    @property
    def W(self) -> np.ndarray:
        """Stacked ``(2, *shape)`` view of the unknowns."""
        return np.stack([self.U, self.V])

    @property
    def W0(self) -> np.ndarray:
        return np.stack([self.U0, self.V0])

    def evolve(self, W: np.ndarray, t: float) -> StateW:
        return StateW(self.grid, W[0], W[1], t, self.U0, self.V0)

    def copy(self) -> StateW:
        return StateW(self.grid, self.U.copy(), self.V.copy(), self.t, self.U0.copy(), self.V0.copy())


def delta_half(Z: np.ndarray, grid: Grid, k: int) -> np.ndarray:
    """Forward quotient ``(Z_{j+e_k} - Z_j) / h_k`` at the half-points along ``k``."""
    return np.diff(Z, axis=k) / grid.spacing[k]


def delta_node(F: np.ndarray, grid: Grid, k: int) -> np.ndarray:
    """Difference of a half-point field back onto the nodes along ``k``.

    The flux through the boundary is zero, and boundary nodes own half a
    cell, which doubles the one-sided quotient there.
    """
    F = np.asarray(F, dtype=np.float64)
    F = np.moveaxis(F, k, 0)
    out = np.empty((F.shape[0] + 1,) + F.shape[1:])
    h = grid.spacing[k]
    out[1:-1] = (F[1:] - F[:-1]) / h
    out[0] = 2.0 * F[0] / h
    out[-1] = -2.0 * F[-1] / h
    return np.moveaxis(out, 0, k)


def second_difference(Z: np.ndarray, grid: Grid, k: int, node: tuple[int, ...] | None = None):
    """``delta_k(delta_k Z)`` at every node, or at one node when ``node`` is given."""
    out = delta_node(delta_half(Z, grid, k), grid, k)
    if node is None:
        return out
    node = tuple(node)
    if len(node) != grid.dim or any(not 0 <= j < n for j, n in zip(node, grid.shape)):
        raise IndexError(f"node {node} outside grid of shape {grid.shape}")
    return float(out[node])


def inner_h(U: np.ndarray, V: np.ndarray, grid: Grid) -> float:
    U = grid.check_field(U, "U")
    V = grid.check_field(V, "V")
    return float(np.sum(grid.node_weights * U * V))


def inner_hk_star(P: np.ndarray, Q: np.ndarray, grid: Grid, k: int) -> float:
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    shape = grid.half_shape(k)
    if P.shape != shape or Q.shape != shape:
        raise GridMismatchError(
            f"half-point fields along direction {k + 1} need shape {shape}, got {P.shape} and {Q.shape}"
        )
    return float(np.sum(grid.half_weights(k) * P * Q))


def norm_h(U: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(inner_h(U, U, grid)))


def norm_W(state: StateW) -> float:
    g = state.grid
    return float(np.sqrt(inner_h(state.U, state.U, g) + inner_h(state.V, state.V, g)))


def weighted_sum(Z: np.ndarray, grid: Grid) -> float:
    """Quadrature of ``Z`` over the domain; conserved by the zero-flux schemes."""
    return float(np.sum(grid.node_weights * Z))
