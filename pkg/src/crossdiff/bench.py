"""Flop-count model for the implicit schemes and a wall-clock benchmark harness.

Flop counts are exact rationals.  ``N_k`` is the number of unknown nodes per
axis of each field, the quantity the per-line systems are sized by.
"""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .blocksolve import DENSE_CAP
from .grid import Grid, StateW
from .model import NO_REACTION, InfluenceModel, ReactionModel, evaluate_coefficients, heat_model
from .schemes import SchemeConfig, advance

COLUMNS = ("2d_square", "3d_cubic", "2d_general", "3d_general")

# (scheme, solver) -> column -> (coefficient, monomial as written)
TABLE1: dict[tuple[str, str], dict[str, tuple[Fraction, str]]] = {
    ("full", "dense"): {
        "2d_square": (Fraction(2, 3), "N^6"),
        "3d_cubic": (Fraction(2, 3), "N^9"),
        "2d_general": (Fraction(2, 3), "N1^3 N2^3"),
        "3d_general": (Fraction(2, 3), "N1^3 N2^3 N3^3"),
    },
    ("aos", "dense"): {
        "2d_square": (Fraction(32, 3), "N^4"),
        "3d_cubic": (Fraction(16), "N^5"),
        "2d_general": (Fraction(16, 3), "N1 N2 sum N_k^2"),
        "3d_general": (Fraction(16, 3), "N1 N2 N3 sum N_k^2"),
    },
    ("amos", "dense"): {
        "2d_square": (Fraction(64, 3), "N^4"),
        "3d_cubic": (Fraction(96), "N^5"),
        "2d_general": (Fraction(32, 3), "N1 N2 sum N_k^2"),
        "3d_general": (Fraction(96, 3), "N1 N2 N3 sum N_k^2"),
    },
    ("aos", "banded"): {
        "2d_square": (Fraction(200), "N^2"),
        "3d_cubic": (Fraction(300), "N^3"),
        "2d_general": (Fraction(200), "N1 N2"),
        "3d_general": (Fraction(300), "N1 N2 N3"),
    },
    ("amos", "banded"): {
        "2d_square": (Fraction(398), "N^2"),
        "3d_cubic": (Fraction(1195), "N^3"),
        "2d_general": (Fraction(398), "N1 N2"),
        "3d_general": (Fraction(1195), "N1 N2 N3"),
    },
}

_SCHEME_NAMES = {"full": "full", "fullimplicit": "full", "fulltheta": "full", "aos": "aos", "amos": "amos"}
_SOLVER_NAMES = {"dense": "dense", "banded": "banded", "blockbanded": "banded", "denseoracle": "dense"}


@dataclass(frozen=True)
class FlopModel:
    scheme: str
    solver: str
    dims: tuple[int, ...]
    leading: Fraction
    full: Fraction | None = None

    @property
    def leading_int(self) -> int:
        return math.floor(self.leading)

    @property
    def full_int(self) -> int | None:
        return None if self.full is None else math.floor(self.full)


def _normalize(scheme: str, solver: str) -> tuple[str, str]:
    sc = _SCHEME_NAMES.get(scheme.lower().replace("_", "").replace("-", ""))
    so = _SOLVER_NAMES.get(solver.lower().replace("_", "").replace("-", ""))
    if sc is None:
        raise ValueError(f"unknown scheme {scheme!r}")
    if so is None:
        raise ValueError(f"unknown solver {solver!r}")
    if (sc, so) not in TABLE1:
        raise ValueError(f"unsupported combination {scheme}+{solver}")
    return sc, so


def column_for(dims: Sequence[int]) -> str:
    if len(dims) == 2:
        return "2d_square" if dims[0] == dims[1] else "2d_general"
    if len(dims) == 3:
        return "3d_cubic" if dims[0] == dims[1] == dims[2] else "3d_general"
    raise ValueError(f"dims must have 2 or 3 entries, got {len(dims)}")


def table1_entry(scheme: str, solver: str, column: str) -> tuple[Fraction, str]:
    sc, so = _normalize(scheme, solver)
    if column not in COLUMNS:
        raise ValueError(f"unknown column {column!r}; expected one of {COLUMNS}")
    return TABLE1[(sc, so)][column]


def _monomial(sc: str, so: str, column: str, dims: Sequence[int]) -> int:
    prod = math.prod(dims)
    if column in ("2d_square", "3d_cubic"):
        n, d = dims[0], len(dims)
        power = {("full", "dense"): 3 * d, ("aos", "dense"): d + 2, ("amos", "dense"): d + 2}.get((sc, so), d)
        return n ** power
    if sc == "full":
        return prod ** 3
    if so == "dense":
        return prod * sum(n * n for n in dims)
    return prod


def full_polynomial(scheme: str, solver: str, dims: Sequence[int]) -> Fraction | None:
    """Complete operation counts quoted for square 2D grids; ``None`` elsewhere.

    The banded AMOS value is ``398 N^2 + 360`` exactly as quoted; by symmetry
    with the AOS count the constant is probably meant to be ``360 N``.
    """
    sc, so = _normalize(scheme, solver)
    if sc == "full":
        n = Fraction(math.prod(dims))
        return Fraction(2, 3) * n ** 3 + Fraction(3, 2) * n ** 2 - Fraction(1, 6) * n
    if len(dims) != 2 or dims[0] != dims[1]:
        return None
    N = Fraction(dims[0])
    return {
        ("aos", "dense"): Fraction(32, 3) * N ** 4 + 12 * N ** 3 + Fraction(4, 3) * N ** 2,
        ("amos", "dense"): Fraction(64, 3) * N ** 4 + 24 * N ** 3 + Fraction(2, 3) * N ** 2,
        ("aos", "banded"): 200 * N ** 2 + 180 * N,
        ("amos", "banded"): 398 * N ** 2 + 360,
    }[(sc, so)]


def flop_count(scheme: str, solver: str, dims: Sequence[int]) -> FlopModel:
    dims = tuple(int(n) for n in dims)
    if any(n < 1 for n in dims):
        raise ValueError(f"dims must be positive, got {dims}")
    sc, so = _normalize(scheme, solver)
    column = column_for(dims)
    coef, _ = TABLE1[(sc, so)][column]
    leading = coef * _monomial(sc, so, column, dims)
    return FlopModel(sc, so, dims, leading, full_polynomial(sc, so, dims))


# -- wall-clock harness -----------------------------------------------------

CSV_HEADER = ("scheme", "solver", "n1", "n2", "n3", "theta", "iters", "ns_total", "ns_per_iter",
              "flops_model", "flops_per_sec", "parallel")
SKIPPED = "skipped (cap)"


@dataclass
class BenchRecord:
    scheme: str
    solver: str
    dims: tuple[int, ...]
    theta: float
    iterations: int
    ns_total: int | None
    ns_per_iter: float | None
    flops_model: int
    parallel: bool = False
    skipped: bool = False

    @property
    def flops_per_sec(self) -> float | None:
        if self.ns_per_iter is None or self.ns_per_iter <= 0:
            return None
        return self.flops_model / (self.ns_per_iter * 1e-9)

    def row(self) -> list:
        dims = list(self.dims) + [""] * (3 - len(self.dims))
        if self.skipped:
            timing = ["", SKIPPED, SKIPPED]
            rate = SKIPPED
        else:
            timing = [self.iterations, self.ns_total, f"{self.ns_per_iter:.1f}"]
            rate = f"{self.flops_per_sec:.6g}"
        return [self.scheme, self.solver, *dims, self.theta, *timing, self.flops_model, rate,
                int(self.parallel)]


@dataclass
class BenchCell:
    scheme: str
    solver: str
    dims: tuple[int, ...]


def cell_matrix(schemes: Iterable[str], solvers: Iterable[str], sizes: Iterable[Sequence[int] | int],
                dim: int = 2) -> list[BenchCell]:
    """Cartesian product; scalar sizes mean square/cubic grids of ``dim`` axes.

    Invalid combinations (full theta with the banded solver) are dropped.
    """
    cells = []
    solvers = list(solvers)
    sizes = [tuple([s] * dim) if np.isscalar(s) else tuple(s) for s in sizes]
    for dims in sizes:
        for sc in schemes:
            for so in solvers:
                try:
                    sc_n, so_n = _normalize(sc, so)
                except ValueError:
                    continue
                cells.append(BenchCell(sc_n, so_n, tuple(int(n) for n in dims)))
    return cells


def benchmark_state(dims: Sequence[int], seed: int = 0, length: float = 1.0) -> StateW:
    """Random initial fields on a grid with ``dims`` nodes per axis."""
    grid = Grid(tuple(n - 1 for n in dims), upper=tuple([length] * len(dims)))
    rng = np.random.default_rng(seed)
    return StateW(grid, rng.random(grid.shape), rng.random(grid.shape))


def _time_batch(fn, iters: int) -> int:
    t0 = time.perf_counter_ns()
    for _ in range(iters):
        fn()
    return time.perf_counter_ns() - t0


def run_benchmark(cells: Sequence[BenchCell], model: InfluenceModel | None = None,
                  reaction: ReactionModel = NO_REACTION, theta: float = 1.0, dt: float = 1e-3,
                  warmup: int = 1, repetitions: int = 3, seed: int = 0, parallel: bool = False,
                  full_cap: int = DENSE_CAP, min_batch_ns: int = 1_000_000,
                  whole_step: bool = False) -> list[BenchRecord]:
    """Median ns per implicit iteration for each cell.

    Coefficient evaluation is excluded unless ``whole_step``.  Iterations are
    batched until a batch lasts at least ``min_batch_ns`` so that sub-microsecond
    iterations are still resolved.  Full theta cells with more than
    ``full_cap`` unknowns are skipped.
    """
    model = model or heat_model()
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    records = []
    for cell in cells:
        flops = flop_count(cell.scheme, cell.solver, cell.dims).leading_int
        if cell.scheme == "full" and 2 * math.prod(cell.dims) > full_cap:
            records.append(BenchRecord(cell.scheme, cell.solver, cell.dims, theta, 0, None, None,
                                       flops, parallel, skipped=True))
            continue
        state = benchmark_state(cell.dims, seed)
        config = SchemeConfig(theta=theta, dt=dt, scheme=cell.scheme, solver=cell.solver,
                              parallel=parallel, check_residual=False)
        coeffs = evaluate_coefficients(state, model, reaction, state.t + theta * dt)
        if whole_step:
            def fn():
                c = evaluate_coefficients(state, model, reaction, state.t + theta * dt)
                return advance(state, c, config)
        else:
            def fn():
                return advance(state, coeffs, config)
        for _ in range(warmup):
            fn()
        iters = 1
        ns = _time_batch(fn, iters)
        while ns < min_batch_ns:
            iters *= max(2, min(1000, int(min_batch_ns / max(ns, 1)) + 1))
            ns = _time_batch(fn, iters)
        samples = [ns] + [_time_batch(fn, iters) for _ in range(repetitions - 1)]
        ns_total = int(statistics.median(samples))
        records.append(BenchRecord(cell.scheme, cell.solver, cell.dims, theta, iters, ns_total,
                                   ns_total / iters, flops, parallel))
    return records


def write_csv(records: Sequence[BenchRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(rec.row())


def fit_slope(sizes: Sequence[float], times: Sequence[float]) -> float:
    """Least-squares slope of ``log(times)`` against ``log(sizes)``."""
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
