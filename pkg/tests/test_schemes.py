import numpy as np
import pytest

from crossdiff.blocksolve import FactorizationError
from crossdiff.grid import Grid, StateW, norm_h, norm_W, weighted_sum
from crossdiff.model import (
    NO_REACTION,
    GeneralModel,
    ReactionModel,
    complex_model,
    constant,
    constant_model,
    evaluate_coefficients,
    heat_model,
    perona_malik,
    rotation_model,
    zero_model,
)
from crossdiff.schemes import (
    DivergenceError,
    SchemeConfig,
    amos_chains,
    assemble_directional_system,
    assemble_full_matrix,
    directional_matrices,
    full_theta_system,
    run,
    step,
    step_amos,
    step_aos,
    step_explicit,
    step_full_theta,
    sweep,
)
from oracles import amos_oracle, aos_oracle, full_theta_oracle, heat_stencil_explicit, sweep_oracle


def random_state(cells, seed=0, **kw):
    g = Grid(cells, **kw)
    rng = np.random.default_rng(seed)
    return StateW(g, rng.random(g.shape), rng.random(g.shape))


def test_config_validation_and_r():
    assert SchemeConfig(theta=0.5, dt=0.2, scheme="aos").r == pytest.approx(0.2)
    assert SchemeConfig(theta=0.5, dt=0.2, scheme="amos").r == pytest.approx(0.1)
    assert SchemeConfig(scheme="AOS", solver="BlockBanded").solver == "banded"
    with pytest.raises(ValueError):
        SchemeConfig(scheme="full", solver="banded")
    for bad in ({"theta": 1.5}, {"dt": 0.0}, {"scheme": "adi"}, {"solver": "cg"}):
        with pytest.raises(ValueError):
            SchemeConfig(**bad)


def test_directional_block_examples():
    # unit spacing so that theta * tau is the coupling r
    g = Grid((4, 4), upper=(4.0, 4.0))
    s = StateW(g, np.zeros(g.shape), np.zeros(g.shape))
    c = evaluate_coefficients(s, heat_model())
    sys = assemble_directional_system(s, c, 0, 2, tau=0.1, theta=1.0)
    np.testing.assert_allclose(sys.matrix.diag[2], [[1.2, 0.0], [0.0, 1.2]])
    np.testing.assert_allclose(sys.matrix.upper[2], -0.1 * np.eye(2))
    np.testing.assert_allclose(sys.matrix.lower[1], -0.1 * np.eye(2))
    # end rows carry the doubled single flux
    np.testing.assert_allclose(sys.matrix.diag[0], 1.2 * np.eye(2))
    np.testing.assert_allclose(sys.matrix.upper[0], -0.2 * np.eye(2))
    np.testing.assert_allclose(sys.matrix.lower[-1], -0.2 * np.eye(2))

    c = evaluate_coefficients(s, constant_model(1.0, 1.0, -1.0, 1.0))
    sys = assemble_directional_system(s, c, 1, 0, tau=0.1, theta=1.0)
    np.testing.assert_allclose(sys.matrix.diag[2], [[1.2, 0.2], [-0.2, 1.2]])

    c = evaluate_coefficients(s, zero_model())
    sys = assemble_directional_system(s, c, 0, 0, tau=0.1, theta=1.0)
    np.testing.assert_array_equal(sys.matrix.diag, np.tile(np.eye(2), (5, 1, 1)))
    np.testing.assert_array_equal(sys.matrix.upper, 0.0)


def test_directional_rhs_is_interleaved():
    g = Grid((3, 2))
    U = np.arange(12.0).reshape(g.shape)
    s = StateW(g, U, -U)
    c = evaluate_coefficients(s, zero_model())
    sys = assemble_directional_system(s, c, 1, (2,), tau=0.1, theta=1.0)
    np.testing.assert_array_equal(sys.rhs, np.ravel(np.column_stack([U[2], -U[2]])))
    assert sys.line == (2,)


def test_full_matrix_properties():
    s = random_state((4, 3), seed=1)
    model = GeneralModel(lambda u, v, t: 1 + u, lambda u, v, t: v, lambda u, v, t: -v, lambda u, v, t: 2 + 0 * u)
    c = evaluate_coefficients(s, model)
    A, Lam = assemble_full_matrix(c, s.grid)
    assert np.abs(A @ np.ones(A.shape[0])).max() <= 1e-12 * abs(A).max()
    _, A_oracle = full_theta_oracle(s.W, s.W0, model, NO_REACTION, s.grid.spacing, 1.0, 0.0)
    np.testing.assert_allclose(A.toarray(), A_oracle, rtol=1e-13, atol=1e-12)
    A0, _ = assemble_full_matrix(evaluate_coefficients(s, zero_model()), s.grid)
    assert abs(A0).max() == 0


def test_full_matrix_strip_is_neumann_second_difference():
    g = Grid((5, 1), upper=(5.0, 1.0))
    s = StateW(g, np.zeros(g.shape), np.zeros(g.shape))
    A, _ = assemble_full_matrix(evaluate_coefficients(s, heat_model()), g)
    # first row of U nodes: axis-1 second difference plus the axis-2 exchange with the twin row
    n = 6
    T = np.diag(-2.0 * np.ones(n)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    T[0, 1] = T[-1, -2] = 2.0
    A11 = A.toarray()[: g.size, : g.size]
    twin = np.diag(A11[:n, n:2 * n].diagonal())
    np.testing.assert_allclose(twin, 2.0 * np.eye(n))
    np.testing.assert_allclose(A11[:n, :n] + twin, T)


def test_full_theta_matches_dense_oracle():
    s = random_state((4, 4), seed=2)
    for model in (heat_model(), rotation_model(), complex_model(perona_malik(0.7), 0.4)):
        for theta in (0.5, 1.0):
            cfg = SchemeConfig(theta=theta, dt=0.01, scheme="full", solver="dense")
            out = step_full_theta(s, model, ReactionModel.constant(0.3, 0.7), cfg).state.W
            ref, _ = full_theta_oracle(s.W, s.W0, model, ReactionModel.constant(0.3, 0.7), s.grid.spacing, theta, 0.01)
            np.testing.assert_allclose(out, ref, rtol=0, atol=1e-10)


def test_full_theta_3d_matches_oracle():
    s = random_state((2, 3, 2), seed=3)
    cfg = SchemeConfig(theta=1.0, dt=0.02, scheme="full", solver="dense")
    out = step_full_theta(s, rotation_model(), NO_REACTION, cfg).state.W
    ref, _ = full_theta_oracle(s.W, s.W0, rotation_model(), NO_REACTION, s.grid.spacing, 1.0, 0.02)
    np.testing.assert_allclose(out, ref, atol=1e-10)


@pytest.mark.parametrize("scheme", ["full", "aos", "amos"])
def test_zero_model_and_constant_data_are_fixed_points(scheme):
    solver = "dense" if scheme == "full" else "banded"
    for theta in (0.0, 0.5, 1.0):
        cfg = SchemeConfig(theta=theta, dt=0.1, scheme=scheme, solver=solver)
        s = random_state((3, 4), seed=4)
        np.testing.assert_array_equal(step(s, zero_model(), NO_REACTION, cfg).state.W, s.W)
        g = s.grid
        const = StateW(g, np.full(g.shape, 0.3), np.full(g.shape, -0.2))
        out = step(const, rotation_model(lambda u, v, t: 1 + u * u), NO_REACTION, cfg).state.W
        np.testing.assert_allclose(out, const.W, rtol=0, atol=1e-14)


def test_explicit_examples():
    g = Grid((2, 2))
    one = np.ones(g.shape)
    s = StateW(g, one, one, U0=np.zeros(g.shape), V0=np.zeros(g.shape))
    out = step_explicit(s, zero_model(), ReactionModel.constant(1.0), 0.25).state
    np.testing.assert_allclose(out.U, 0.75)
    g = Grid((4, 4))
    U = np.zeros(g.shape)
    U[2, 2] = 1.0
    s = StateW(g, U, U.copy())
    out = step_explicit(s, heat_model(), NO_REACTION, 0.01).state
    np.testing.assert_allclose(out.U, heat_stencil_explicit(U, g.spacing, 0.01), atol=1e-14)
    U = np.random.default_rng(0).random(g.shape)
    out = step_explicit(StateW(g, U, U), heat_model(), NO_REACTION, 0.003).state
    np.testing.assert_allclose(out.U, heat_stencil_explicit(U, g.spacing, 0.003), atol=1e-13)


def test_aos_direction_with_constant_data_is_identity():
    g = Grid((4, 5))
    x = g.coordinates()[0]
    s = StateW(g, np.sin(3 * x), np.cos(2 * x))
    c = evaluate_coefficients(s, heat_model(), NO_REACTION, 0.0)
    out = sweep(s.W, s.W0, c, g, 1, 0.2, 1.0, 0.5)
    # identical up to the rounding of the block recurrence
    np.testing.assert_allclose(out, s.W, rtol=0, atol=1e-14)


def test_sweeps_match_oracle_per_direction():
    s = random_state((5, 5), seed=6)
    model = complex_model(perona_malik(0.5), 0.8)
    reaction = ReactionModel.constant(0.4, 0.1)
    for theta in (0.5, 1.0):
        c = evaluate_coefficients(s, model, reaction, theta * 0.05)
        for k in range(2):
            out = sweep(s.W, s.W0, c, s.grid, k, 0.1, theta, 0.5)
            l1 = np.full(s.grid.shape, 0.4)
            l2 = np.full(s.grid.shape, 0.1)
            ref = sweep_oracle(s.W, s.W0, l1, l2, model, s.W, theta * 0.05, s.grid.spacing, k, 0.1, theta, 0.5)
            np.testing.assert_allclose(out, ref, atol=1e-10)


@pytest.mark.parametrize("solver", ["banded", "dense"])
def test_aos_amos_match_oracles_2d_3d(solver):
    reaction = ReactionModel.constant(0.5, 0.2)
    for cells in ((5, 5), (3, 3, 3)):
        s = random_state(cells, seed=7)
        for model in (heat_model(), complex_model(perona_malik(0.5), 0.6)):
            for theta in (0.5, 1.0):
                aos = step_aos(s, model, reaction, SchemeConfig(theta=theta, dt=0.02, scheme="aos", solver=solver))
                ref = aos_oracle(s.W, s.W0, model, reaction, s.grid.spacing, theta, 0.02)
                np.testing.assert_allclose(aos.state.W, ref, atol=1e-10)
                amos = step_amos(s, model, reaction, SchemeConfig(theta=theta, dt=0.02, scheme="amos", solver=solver))
                ref = amos_oracle(s.W, s.W0, model, reaction, s.grid.spacing, theta, 0.02)
                np.testing.assert_allclose(amos.state.W, ref, atol=1e-10)


def test_amos_sweep_counts():
    assert amos_chains(2) == [(0, 1), (1, 0)]
    assert len(amos_chains(3)) == 6
    s2 = random_state((3, 3))
    s3 = random_state((2, 2, 2))
    r2 = step_amos(s2, heat_model(), config=SchemeConfig(scheme="amos"))
    r3 = step_amos(s3, heat_model(), config=SchemeConfig(scheme="amos"))
    # cached prefixes: 2 + 2 sweeps in 2D, 3 + 6 + 6 in 3D; systems = sweeps * lines
    assert r2.systems_solved == 4 * 4
    assert r3.systems_solved == 15 * 9


def test_amos_separable_chains_commute():
    s = random_state((5, 6), seed=8)
    model = constant_model(0.7, 0.0, 0.0, 1.3)
    cfg = SchemeConfig(theta=1.0, dt=0.05, scheme="amos")
    a = step_amos(s, model, config=cfg, orders=[(0, 1)]).state.W
    b = step_amos(s, model, config=cfg, orders=[(1, 0)]).state.W
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_amos_axis_relabeling_symmetry():
    rng = np.random.default_rng(9)
    U, V = rng.random((5, 7)), rng.random((5, 7))
    model = complex_model(perona_malik(0.5), 0.3)
    cfg = SchemeConfig(theta=1.0, dt=0.05, scheme="amos")
    a = step_amos(StateW(Grid((4, 6)), U, V), model, config=cfg).state.W
    b = step_amos(StateW(Grid((6, 4)), U.T, V.T), model, config=cfg).state.W
    np.testing.assert_allclose(a, b.transpose(0, 2, 1), atol=1e-14)


def test_solvers_agree_on_random_psd_model():
    s = random_state((6, 5), seed=10)
    model = GeneralModel(lambda u, v, t: 1 + u, lambda u, v, t: 0.5 + v, lambda u, v, t: -0.5 - v,
                         lambda u, v, t: 1 + v * v)
    for scheme in ("aos", "amos"):
        a = step(s, model, NO_REACTION, SchemeConfig(scheme=scheme, solver="banded", dt=0.05)).state.W
        b = step(s, model, NO_REACTION, SchemeConfig(scheme=scheme, solver="dense", dt=0.05)).state.W
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_splitting_error_is_second_order_per_step():
    g = Grid((12, 12))
    x, y = g.coordinates()
    s = StateW(g, np.cos(np.pi * x) * np.cos(2 * np.pi * y), np.cos(2 * np.pi * x) + np.cos(np.pi * y))
    model = constant_model(1.0, -0.5, 0.5, 0.8)

    def err(dt):
        a = step_aos(s, model, config=SchemeConfig(dt=dt, scheme="aos")).state.W
        f = step_full_theta(s, model, config=SchemeConfig(dt=dt, scheme="full", solver="dense")).state.W
        return np.hypot(norm_h(a[0] - f[0], g), norm_h(a[1] - f[1], g))

    ratio = err(5e-4) / err(2.5e-4)
    assert 3.0 <= ratio <= 5.0


@pytest.mark.parametrize("scheme", ["full", "aos", "amos"])
def test_conservation_and_non_expansion(scheme):
    cells = (5, 4) if scheme == "full" else (6, 5)
    s = random_state(cells, seed=12)
    model = complex_model(perona_malik(0.4), 0.5)
    cfg = SchemeConfig(theta=1.0, dt=0.02, scheme=scheme, solver="dense" if scheme == "full" else "banded")
    su, sv = weighted_sum(s.U, s.grid), weighted_sum(s.V, s.grid)
    prev = norm_W(s)
    for _ in range(20):
        s = step(s, model, NO_REACTION, cfg).state
        assert norm_W(s) <= prev + 1e-12
        prev = norm_W(s)
    assert weighted_sum(s.U, s.grid) == pytest.approx(su, rel=1e-10)
    assert weighted_sum(s.V, s.grid) == pytest.approx(sv, rel=1e-10)


def test_divergence_error_and_factorization_error():
    g = Grid((3, 3))
    s = StateW(g, np.ones(g.shape), np.ones(g.shape))
    blow = GeneralModel(constant(1e308), constant(0), constant(0), constant(1e308))
    U = np.random.default_rng(0).random(g.shape)
    with pytest.raises(DivergenceError):
        with np.errstate(all="ignore"):
            step_explicit(StateW(g, U, U), blow, NO_REACTION, 1e10)
    # anti-diffusion makes the line pivot singular for a tuned step
    neg = constant_model(-1.0, 0.0, 0.0, -1.0)
    h2 = g.spacing[0] ** 2
    with pytest.raises(FactorizationError) as exc:
        step_amos(s, neg, NO_REACTION, SchemeConfig(scheme="amos", dt=h2 / 2))
    assert exc.value.direction == 1 and exc.value.line == 0


def test_run_and_directional_matrices():
    s = random_state((3, 3))
    seen = []
    reports = run(s, heat_model(), NO_REACTION, SchemeConfig(steps=3), callback=lambda m, r: seen.append(m))
    assert seen == [1, 2, 3] and len(reports) == 3
    assert reports[-1].state.t == pytest.approx(0.3)
    c = evaluate_coefficients(s, heat_model())
    mats = list(directional_matrices(s, c, SchemeConfig(scheme="aos")))
    assert len(mats) == 8
    M, rhs = full_theta_system(s, c, 1.0, 0.1)
    assert M.shape == (32, 32) and rhs.shape == (32,)
