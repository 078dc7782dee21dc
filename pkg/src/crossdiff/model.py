"""Cross-diffusion coefficient families and reaction terms.

Every model function takes ``(u, v, t)`` and must broadcast over numpy arrays.
Coefficients are always frozen at the lagged state ``W^m``; only the unknowns
are blended in time by the schemes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import StateW

ScalarFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


class ModelEvaluationError(ValueError):
    """A model function produced a non-finite value."""


def constant(value: float) -> ScalarFn:
    value = float(value)

    def fn(u, v, t):
        return np.full(np.broadcast(u, v).shape, value)

    fn.value = value
    return fn


class InfluenceModel:
    """Base class; subclasses implement :meth:`expand`."""

    def expand(self, u, v, t) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def matrix(self, u: float, v: float, t: float) -> np.ndarray:
        """Pointwise 2x2 cross-diffusion matrix."""
        d1, d2, d3, d4 = (float(np.asarray(d)) for d in self.expand(u, v, t))
        return np.array([[d1, d2], [d3, d4]])


@dataclass
class GeneralModel(InfluenceModel):
    d1: ScalarFn
    d2: ScalarFn
    d3: ScalarFn
    d4: ScalarFn

    def expand(self, u, v, t):
        shape = np.broadcast(u, v).shape
        return tuple(np.broadcast_to(np.asarray(d(u, v, t), dtype=np.float64), shape)
                     for d in (self.d1, self.d2, self.d3, self.d4))


@dataclass
class ScaledConstant(InfluenceModel):
    """``g(u, v, t) * M`` with a constant 2x2 matrix ``M`` and ``g >= 0``."""

    g: ScalarFn
    M: np.ndarray

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=np.float64).reshape(2, 2)

    def expand(self, u, v, t):
        g = np.broadcast_to(np.asarray(self.g(u, v, t), dtype=np.float64), np.broadcast(u, v).shape)
        m = self.M
        return g * m[0, 0], g * m[0, 1], g * m[1, 0], g * m[1, 1]


@dataclass
class ComplexDiffusion(InfluenceModel):
    """``[[g, -f], [f, g]]`` with ``g > 0``."""

    g: ScalarFn
    f: ScalarFn

    def expand(self, u, v, t):
        shape = np.broadcast(u, v).shape
        g = np.broadcast_to(np.asarray(self.g(u, v, t), dtype=np.float64), shape)
        f = np.broadcast_to(np.asarray(self.f(u, v, t), dtype=np.float64), shape)
        return g, -f, f, g


def expand_variant(model: InfluenceModel, u, v, t) -> tuple:
    return model.expand(u, v, t)


RELATIONS = ("equal", "first_dominates", "second_dominates", "sign_changes")


@dataclass
class ReactionModel:
    lambda1: ScalarFn
    lambda2: ScalarFn
    relation: str = "equal"

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown reaction relation {self.relation!r}; expected one of {RELATIONS}")

    @classmethod
    def constant(cls, lambda1: float = 0.0, lambda2: float | None = None) -> ReactionModel:
        lambda2 = lambda1 if lambda2 is None else lambda2
        if lambda1 < 0 or lambda2 < 0:
            raise ValueError("reaction coefficients must be non-negative")
        if lambda1 == lambda2:
            relation = "equal"
        elif lambda1 > lambda2:
            relation = "first_dominates"
        else:
            relation = "second_dominates"
        return cls(constant(lambda1), constant(lambda2), relation)

    def evaluate(self, u, v, t) -> tuple[np.ndarray, np.ndarray]:
        shape = np.broadcast(u, v).shape
        lam1 = np.broadcast_to(np.asarray(self.lambda1(u, v, t), dtype=np.float64), shape)
        lam2 = np.broadcast_to(np.asarray(self.lambda2(u, v, t), dtype=np.float64), shape)
        return lam1, lam2


NO_REACTION = ReactionModel.constant(0.0)


@dataclass
class EvaluatedCoefficients:
    """Frozen coefficients for one time step.

    ``half[k]`` has shape ``(4, *grid.half_shape(k))`` and holds the averaged
    ``d1..d4`` on the half-points along direction ``k``.  ``lam1``/``lam2`` are
    node arrays.
    """

    half: list[np.ndarray]
    lam1: np.ndarray
    lam2: np.ndarray
    t_eval: float


def _check_finite(name: str, values: np.ndarray):
    bad = ~np.isfinite(values)
    if bad.any():
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ModelEvaluationError(f"{name} is not finite at node {node}")


def half_point_average(nodal: np.ndarray, k: int) -> np.ndarray:
    """Mean of the two node values adjacent to each half-point along ``k``."""
    nodal = np.moveaxis(nodal, k, 0)
    return np.moveaxis(0.5 * (nodal[1:] + nodal[:-1]), 0, k)


def evaluate_coefficients(
    state: StateW,
    model: InfluenceModel,
    reaction: ReactionModel = NO_REACTION,
    t_eval: float | None = None,
) -> EvaluatedCoefficients:
    t_eval = state.t if t_eval is None else float(t_eval)
    d = model.expand(state.U, state.V, t_eval)
    for ell, values in enumerate(d, start=1):
        _check_finite(f"d{ell}", values)
    lam1, lam2 = reaction.evaluate(state.U, state.V, t_eval)
    _check_finite("lambda1", lam1)
    _check_finite("lambda2", lam2)
    if (lam1 < 0).any() or (lam2 < 0).any():
        raise ModelEvaluationError("reaction coefficients must be non-negative")
    half = [np.stack([half_point_average(np.asarray(dl), k) for dl in d])
            for k in range(state.grid.dim)]
    return EvaluatedCoefficients(half, np.array(lam1), np.array(lam2), t_eval)


# -- presets ---------------------------------------------------------------

def zero_model() -> GeneralModel:
    z = constant(0.0)
    return GeneralModel(z, z, z, z)


def heat_model(diffusivity: float = 1.0) -> ScaledConstant:
    return ScaledConstant(constant(diffusivity), np.eye(2))


def constant_model(d1: float, d2: float, d3: float, d4: float) -> GeneralModel:
    return GeneralModel(constant(d1), constant(d2), constant(d3), constant(d4))


def perona_malik(kappa: float, scale: float = 1.0) -> ScalarFn:
    """Edge-stopping weight ``scale / (1 + (v / kappa)^2)`` driven by the second field."""

    def g(u, v, t):
        return scale / (1.0 + (np.asarray(v) / kappa) ** 2)

    return g


def rotation_model(g: ScalarFn | float = 1.0, matrix=((1.0, -1.0), (1.0, 1.0))) -> ScaledConstant:
    g = constant(g) if np.isscalar(g) else g
    return ScaledConstant(g, np.asarray(matrix, dtype=np.float64))


def complex_model(g: ScalarFn | float = 1.0, f: ScalarFn | float = 0.5) -> ComplexDiffusion:
    g = constant(g) if np.isscalar(g) else g
    f = constant(f) if np.isscalar(f) else f
    return ComplexDiffusion(g, f)
