"""Acceptance criteria 1-9.

Each test prints one ``criterion N: PASS|FAIL ...`` line (visible without
``-s``) and then asserts.  Tolerances and runtime budgets are the contract
values; timings are measured on the machine running the suite.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from crossdiff import bench
from crossdiff.blocksolve import (
    BlockTridiagonalMatrix,
    block_lu_factor,
    block_lu_solve,
    dense_solve,
    satisfies_lemma1,
)
from crossdiff.cli import main, stability_report
from crossdiff.config import load_config
from crossdiff.fieldio import decode, encode, read_fields
from crossdiff.grid import Grid, StateW, norm_W, weighted_sum
from crossdiff.model import (
    NO_REACTION,
    ComplexDiffusion,
    ReactionModel,
    complex_model,
    constant,
    constant_model,
    evaluate_coefficients,
    heat_model,
    perona_malik,
    rotation_model,
)
from crossdiff.schemes import SchemeConfig, directional_matrices, step, step_amos, step_aos, step_explicit
from crossdiff.stability import (
    FAIL,
    check_explicit_bound,
    check_lemma45_matrices,
    check_theorem6,
    samples_from_state,
)
from oracles import amos_oracle, aos_oracle, dense_to_blocks, psd_line_system


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail, elapsed, budget):
        ok = bool(ok) and elapsed < budget
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}  ({elapsed:.2f} s, budget {budget:g} s)")
        assert ok, detail
    return emit


def random_state(cells, seed=0):
    g = Grid(cells)
    rng = np.random.default_rng(seed)
    return StateW(g, rng.random(g.shape), rng.random(g.shape))


def test_criterion_1_flop_table(verdict):
    t0 = time.perf_counter()
    F = Fraction
    expected = {
        ("full", "dense"): (F(2, 3), F(2, 3), F(2, 3), F(2, 3)),
        ("aos", "dense"): (F(32, 3), F(16), F(16, 3), F(16, 3)),
        ("amos", "dense"): (F(64, 3), F(96), F(32, 3), F(32)),
        ("aos", "banded"): (F(200), F(300), F(200), F(300)),
        ("amos", "banded"): (F(398), F(1195), F(398), F(1195)),
    }
    bad = [(key, col) for key, row in expected.items() for col, coef in zip(bench.COLUMNS, row)
           if bench.table1_entry(*key, col)[0] != coef]
    cells = sum(len(r) for r in expected.values())
    polys = [bench.full_polynomial("aos", "banded", (N, N)) == 200 * N * N + 180 * N for N in (1, 10, 64, 513)]
    polys += [bench.full_polynomial("amos", "banded", (N, N)) == 398 * N * N + 360 for N in (1, 10, 64, 513)]
    examples = (bench.flop_count("full", "dense", (10, 10)).leading_int == 666666
                and bench.flop_count("aos", "banded", (10, 10)).full_int == 21800
                and bench.flop_count("amos", "banded", (2, 3, 4)).leading_int == 28680)
    ok = not bad and cells == 20 and all(polys) and examples
    verdict(1, ok, f"{cells - len(bad)}/20 cells exact, polynomials {sum(polys)}/{len(polys)}",
            time.perf_counter() - t0, 1.0)


def test_criterion_2_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for n in (4, 8, 16, 32, 64):
        for _ in range(50):
            M = psd_line_system(rng, n)
            rhs = rng.standard_normal(2 * n)
            x = block_lu_solve(BlockTridiagonalMatrix(*dense_to_blocks(M)), rhs)
            ref = dense_solve(M, rhs)
            worst = max(worst, np.abs(x - ref).max() / np.abs(ref).max())
    verdict(2, worst <= 1e-10, f"max relative deviation {worst:.2e} (tol 1e-10)", time.perf_counter() - t0, 10.0)


def test_criterion_3_block_lu_reconstruction(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    recon, norm, count = 0.0, 0.0, 0
    while count < 100:
        M = psd_line_system(rng, int(rng.integers(2, 40)))
        A = BlockTridiagonalMatrix(*dense_to_blocks(M))
        if not satisfies_lemma1(A):
            continue
        f, diag = block_lu_factor(A)
        recon = max(recon, np.abs(f.reconstruct() - M).max() / np.abs(M).max())
        norm = max(norm, diag.max_upper_bar_norm)
        count += 1
    ok = recon <= 1e-12 and norm < 1 + 1e-12
    verdict(3, ok, f"reconstruction {recon:.2e} (tol 1e-12), max |Bbar^-1 U| {norm:.6f}",
            time.perf_counter() - t0, 10.0)


def test_criterion_4_scheme_vs_dense(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    reaction = ReactionModel.constant(0.3, 0.1)
    for cells in ((5, 5), (3, 3, 3)):
        s = random_state(cells, seed=4)
        for model in (heat_model(), complex_model(perona_malik(0.5), 0.7)):
            for theta in (0.5, 1.0):
                for stepper, oracle, name in ((step_aos, aos_oracle, "aos"), (step_amos, amos_oracle, "amos")):
                    cfg = SchemeConfig(theta=theta, dt=0.02, scheme=name, solver="banded")
                    got = stepper(s, model, reaction, cfg).state.W
                    ref = oracle(s.W, s.W0, model, reaction, s.grid.spacing, theta, 0.02)
                    worst = max(worst, np.abs(got - ref).max())
    verdict(4, worst <= 1e-10, f"max deviation {worst:.2e} (tol 1e-10)", time.perf_counter() - t0, 30.0)


def _norm_run(state, model, cfg, steps=100):
    norms, sums = [norm_W(state)], [(weighted_sum(state.U, state.grid), weighted_sum(state.V, state.grid))]
    for _ in range(steps):
        state = step(state, model, NO_REACTION, cfg).state
        norms.append(norm_W(state))
        sums.append((weighted_sum(state.U, state.grid), weighted_sum(state.V, state.grid)))
    return np.array(norms), np.array(sums)


def _explicit_ratio(model, state, dt, steps=200):
    n0 = norm_W(state)
    worst = 1.0
    for _ in range(steps):
        try:
            state = step_explicit(state, model, NO_REACTION, dt).state
        except FloatingPointError:
            return np.inf
        worst = max(worst, norm_W(state) / n0)
        if worst > 1e6:
            break
    return worst


def test_criterion_5_stability_invariants(verdict):
    t0 = time.perf_counter()
    problems = []
    drift = 0.0
    models = (heat_model(), rotation_model(), complex_model(perona_malik(0.5), 0.7))
    runs = [((5, 5), "full", "dense"), ((3, 3, 3), "full", "dense"),
            ((8, 8), "aos", "banded"), ((8, 8), "amos", "banded"),
            ((4, 4, 4), "aos", "banded"), ((4, 4, 4), "amos", "banded")]
    for cells, scheme, solver in runs:
        for model in models:
            s = random_state(cells, seed=5)
            norms, sums = _norm_run(s, model, SchemeConfig(theta=1.0, dt=0.01, scheme=scheme, solver=solver))
            if np.any(np.diff(norms) > 1e-14 * norms[0]):
                problems.append(f"norm increase {scheme} {cells}")
            drift = max(drift, float(np.abs(sums - sums[0]).max() / np.abs(sums[0]).max()))
    if drift > 1e-10:
        problems.append(f"conservation drift {drift:.2e}")
    s = random_state((10, 10), seed=1)
    model = complex_model(1.0, 1.0)
    dt_max = check_explicit_bound(model, s.grid, 1.0, samples_from_state(s)).dt_max
    above = _explicit_ratio(model, s, 10 * dt_max)
    below = _explicit_ratio(model, s, 0.5 * dt_max)
    if not above > 10:
        problems.append(f"10x bound ratio {above:.3g}")
    if not below < 2:
        problems.append(f"0.5x bound ratio {below:.3g}")
    detail = (f"monotone norms in {len(runs) * len(models)} runs, weighted-sum drift {drift:.1e}, "
              f"explicit ratios 10x: {above:.3g}, 0.5x: {below:.3g}")
    verdict(5, not problems, "; ".join(problems) or detail, time.perf_counter() - t0, 60.0)


def test_criterion_6_speedup_ordering(verdict):
    t0 = time.perf_counter()
    dims = (64, 64)
    fast = [bench.BenchCell(sc, so, dims) for sc, so in
            (("aos", "dense"), ("aos", "banded"), ("amos", "dense"), ("amos", "banded"))]
    recs = bench.run_benchmark(fast, heat_model(), warmup=1, repetitions=3)
    recs += bench.run_benchmark([bench.BenchCell("full", "dense", dims)], heat_model(), warmup=0,
                                repetitions=1, min_batch_ns=0)
    t = {(r.scheme, r.solver): r.ns_per_iter for r in recs}
    ok = (t["full", "dense"] > t["aos", "dense"] > t["aos", "banded"]
          and t["amos", "dense"] > t["amos", "banded"]
          and t["full", "dense"] >= 10 * t["aos", "banded"])
    detail = ", ".join(f"{sc}-{so} {ns / 1e6:.3g} ms" for (sc, so), ns in t.items())
    verdict(6, ok, detail + f"; full/aos-banded {t['full', 'dense'] / t['aos', 'banded']:.0f}x",
            time.perf_counter() - t0, 300.0)


def test_criterion_7_scaling_exponent(verdict):
    t0 = time.perf_counter()
    sizes = (64, 128, 256, 512)
    recs = bench.run_benchmark([bench.BenchCell("aos", "banded", (n, n)) for n in sizes], heat_model(),
                               warmup=1, repetitions=3)
    slope = bench.fit_slope(sizes, [r.ns_per_iter for r in recs])
    verdict(7, 1.7 <= slope <= 2.4, f"log-log slope {slope:.3f} (band [1.7, 2.4])", time.perf_counter() - t0, 300.0)


def _block_run(state, model, reaction, cfg, steps=50):
    """Largest |Bbar^-1 U| over every factorisation of a run (raises on singular pivots)."""
    worst = 0.0
    for _ in range(steps):
        coeffs = evaluate_coefficients(state, model, reaction, state.t + cfg.theta * cfg.dt)
        for _, _, A in directional_matrices(state, coeffs, cfg):
            worst = max(worst, block_lu_factor(A)[1].max_upper_bar_norm)
        state = step(state, model, reaction, cfg).state
    return worst


def test_criterion_8_checker_soundness(verdict, tmp_path):
    t0 = time.perf_counter()
    configs = [
        {"model.preset": "heat", "scheme.dt": 10.0},
        {"model.preset": "heat", "reaction.lambda1": 0.5, "reaction.lambda2": 0.5, "scheme.name": "amos"},
        {"model.preset": "rotation", "scheme.dt": 1.0, "scheme.name": "amos"},
        {"model.preset": "complex", "model.g": 1.0, "model.f": 3.0, "scheme.dt": 0.5},
        {"model.preset": "perona_malik", "model.f": 0.5, "scheme.dt": 0.05},
        {"model.preset": "constant", "model.d": (2.0, 0.5, -0.5, 1.0), "reaction.lambda1": 1.0,
         "scheme.name": "amos", "scheme.dt": 0.1},
        {"model.preset": "constant", "model.d": (1.0, 3.0, 0.0, 1.0)},
    ]
    passed, failed, worst = 0, 0, 0.0
    for extra in configs:
        over = {"grid.cells": (8, 8), "scheme.steps": 50, **extra}
        cfg = load_config(overrides=over, environ={})
        report = stability_report(cfg)
        if report["theorem6"]:
            passed += 1
            worst = max(worst, _block_run(cfg.initial_state(), cfg.model(), cfg.reaction(), cfg.scheme()))
        else:
            failed += 1
    # a spatially varying model at large r is outside the guarantee and must not be reported as a pass
    s = random_state((10, 10), seed=1)
    varying = ComplexDiffusion(lambda u, v, t: 1 + 5 * np.asarray(u) ** 2, constant(3.0))
    cfg = SchemeConfig(dt=1.0, scheme="amos")
    systems = [A for _, _, A in directional_matrices(s, evaluate_coefficients(s, varying), cfg)]
    large_r = check_theorem6(varying, NO_REACTION, cfg.r, samples_from_state(s), systems, 0.5, 0.1)
    counter = check_lemma45_matrices(ReactionModel.constant(2.0, 0.0), constant_model(0, 10, 0, 1), 1.0,
                                     np.zeros((1, 3)))
    ok = (passed >= 5 and worst <= 1 + 1e-12 and large_r.status == FAIL
          and counter.status == FAIL and counter.witness is not None)
    detail = (f"{passed} passing configs ran 50 steps, max |Bbar^-1 U| {worst:.6f}; {failed} reported fail; "
              f"large-r varying model {large_r.status}; counterexample {counter.status} "
              f"witness {counter.witness and counter.witness.get('matrix')}")
    verdict(8, ok, detail, time.perf_counter() - t0, 30.0)


def test_criterion_9_determinism_round_trip(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "run.cfg"
    cfg.write_text("grid.cells = 6, 7\nmodel.preset = perona_malik\nscheme.name = amos\nscheme.steps = 5\n")
    outs = []
    for name in ("a", "b"):
        main(["run", "--config", str(cfg), "--out", str(tmp_path / name), "--seed", "42"])
        outs.append(sorted(p.read_bytes() for p in (tmp_path / name).glob("*.xdif")))
    identical = outs[0] == outs[1] and len(outs[0]) == 6
    data = (tmp_path / "a" / "fields_000005.xdif").read_bytes()
    stable = encode(*decode(data)) == data and encode(*read_fields(tmp_path / "a" / "fields_000005.xdif")) == data
    verdict(9, identical and stable, f"outputs bit-identical: {identical}, write-read-write stable: {stable}",
            time.perf_counter() - t0, 5.0)
