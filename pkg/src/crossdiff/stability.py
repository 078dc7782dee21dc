"""Checkable stability hypotheses and run-time norm monitoring.

Pointwise conditions ("for all (u, v, t)") are evaluated on a finite sample
set, usually every node of the current state plus user probes.  A passing
verdict therefore means "holds on the samples"; it is never a proof.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .blocksolve import BlockTridiagonalMatrix, lemma1_quantities
from .grid import Grid, StateW, delta_half, inner_hk_star
from .model import ComplexDiffusion, GeneralModel, InfluenceModel, ReactionModel, ScaledConstant, evaluate_coefficients

PASS, FAIL, NA = "pass", "fail", "n/a"
PSD_RTOL = 1e-12
FORM_RTOL = 1e-10
BLOCK_NORM_TOL = 1e-12


@dataclass
class Verdict:
    name: str
    status: str
    detail: str = ""
    witness: dict | None = None
    dt_max: float | None = None
    regime: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def __bool__(self) -> bool:
        return self.passed


@dataclass
class StabilityReport:
    verdicts: list[Verdict] = field(default_factory=list)

    def add(self, verdict: Verdict) -> Verdict:
        self.verdicts.append(verdict)
        return verdict

    def __getitem__(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def failed(self) -> list[Verdict]:
        return [v for v in self.verdicts if v.status == FAIL]

    def to_dict(self) -> dict:
        return {"verdicts": [_jsonable(asdict(v)) for v in self.verdicts]}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def samples_from_state(state: StateW, probes: Iterable[Sequence[float]] = ()) -> np.ndarray:
    """``(m, 3)`` array of ``(u, v, t)`` taken from every node plus extra probes."""
    pts = np.column_stack([state.U.ravel(), state.V.ravel(), np.full(state.U.size, state.t)])
    probes = np.asarray(list(probes), dtype=np.float64).reshape(-1, 3)
    return np.vstack([pts, probes])


def _model_matrices(model: InfluenceModel, samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    u, v, t = samples[:, 0], samples[:, 1], samples[:, 2]
    # model functions take a scalar time; evaluate per distinct t
    out = np.empty((len(samples), 2, 2))
    for tv in np.unique(t):
        sel = t == tv
        d1, d2, d3, d4 = model.expand(u[sel], v[sel], float(tv))
        out[sel] = np.stack([np.stack([d1, d2], -1), np.stack([d3, d4], -1)], -2)
    return out


def _reaction_values(reaction: ReactionModel, samples: np.ndarray):
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    lam1 = np.empty(len(samples))
    lam2 = np.empty(len(samples))
    for tv in np.unique(samples[:, 2]):
        sel = samples[:, 2] == tv
        l1, l2 = reaction.evaluate(samples[sel, 0], samples[sel, 1], float(tv))
        lam1[sel] = l1
        lam2[sel] = l2
    return lam1, lam2


def _sym_min_eig(M: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of the symmetric part of each 2x2 in ``(..., 2, 2)``."""
    a = M[..., 0, 0]
    d = M[..., 1, 1]
    b = 0.5 * (M[..., 0, 1] + M[..., 1, 0])
    return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * b)


def _psd_tol(M: np.ndarray) -> np.ndarray:
    return PSD_RTOL * np.maximum(1.0, np.abs(M).sum(axis=-1).max(axis=-1))


def check_psd_nns(M, strict: bool = False, name: str = "psd") -> Verdict:
    """Positive (semi-)definiteness of a not necessarily symmetric 2x2 matrix."""
    M = np.asarray(M, dtype=np.float64).reshape(2, 2)
    sym = 0.5 * (M + M.T)
    eig = np.linalg.eigvalsh(sym)
    tol = float(_psd_tol(M))
    ok = eig[0] > tol if strict else eig[0] >= -tol
    witness = None if ok else {"matrix": M.tolist(), "symmetric_eigenvalues": eig.tolist()}
    kind = "definite" if strict else "semi-definite"
    return Verdict(name, PASS if ok else FAIL, f"min eigenvalue of symmetric part {eig[0]:.6g} ({kind})", witness)


def check_model_psd(model: InfluenceModel, samples, strict: bool = False) -> Verdict:
    mats = _model_matrices(model, samples)
    low = _sym_min_eig(mats)
    tol = _psd_tol(mats)
    bad = low <= tol if strict else low < -tol
    if bad.any():
        i = int(np.argmax(bad))
        return Verdict("model_psd", FAIL, "cross-diffusion matrix not positive semi-definite",
                       {"sample": np.asarray(samples)[i].tolist(), "matrix": mats[i].tolist(),
                        "min_symmetric_eigenvalue": float(low[i])})
    return Verdict("model_psd", PASS, f"pass on {len(mats)} samples")


def check_diagonal_dominance(model: InfluenceModel, samples) -> Verdict:
    """``d1 >= |d2 + d3| / 2`` and ``d4 >= |d2 + d3| / 2`` at every sample."""
    mats = _model_matrices(model, samples)
    if len(mats) == 0:
        raise ValueError("need at least one sample")
    off = 0.5 * np.abs(mats[:, 0, 1] + mats[:, 1, 0])
    bad = (mats[:, 0, 0] < off) | (mats[:, 1, 1] < off)
    if bad.any():
        i = int(np.argmax(bad))
        return Verdict("diagonal_dominance", FAIL, "sufficient diagonal condition violated",
                       {"sample": np.asarray(samples)[i].tolist(), "matrix": mats[i].tolist()})
    return Verdict("diagonal_dominance", PASS, f"pass on {len(mats)} samples")


class ModelError(ValueError):
    pass


def check_explicit_bound(model: ComplexDiffusion, grid: Grid, dt: float, samples) -> Verdict:
    """Explicit step limit ``4 dt / h_k^2 * max (g^2 + f^2) / g < 1`` for complex diffusion."""
    if not isinstance(model, ComplexDiffusion):
        return Verdict("explicit_bound", NA, "only defined for the complex-diffusion family")
    mats = _model_matrices(model, samples)
    g = mats[:, 0, 0]
    f = mats[:, 1, 0]
    if (g <= 0).any():
        i = int(np.argmax(g <= 0))
        raise ModelError(f"g must be positive; g={g[i]} at sample {np.asarray(samples)[i].tolist()}")
    q = (g ** 2 + f ** 2) / g
    qmax = float(q.max())
    i = int(q.argmax())
    h2 = np.array(grid.spacing) ** 2
    factors = 4.0 * dt / h2 * qmax
    dt_max = float(np.min(h2 / (4.0 * qmax)))
    ok = bool(np.all(factors < 1.0))
    witness = None if ok else {"sample": np.asarray(samples)[i].tolist(), "axis": int(np.argmax(factors)) + 1,
                               "factor": float(factors.max())}
    return Verdict("explicit_bound", PASS if ok else FAIL,
                   f"max 4 dt/h^2 (g^2+f^2)/g = {factors.max():.6g}", witness, dt_max=dt_max)


def energy_form(coeff_state: StateW, model: InfluenceModel, U, V, directions=None,
                dt: float = 0.0, eta: tuple[float, float] = (0.0, 0.0), explicit: bool = False,
                reaction: ReactionModel | None = None, t_eval: float | None = None) -> dict:
    """Bilinear energy sum of the stability conditions for one probe pair ``(U, V)``.

    Coefficients are evaluated from ``coeff_state``.  Returns the value, a
    magnitude scale for the tolerance and, for the explicit form, the largest
    common ``eta`` keeping the form non-negative.
    """
    grid = coeff_state.grid
    coeffs = evaluate_coefficients(coeff_state, model, reaction or ReactionModel.constant(0.0), t_eval)
    directions = range(grid.dim) if directions is None else directions
    quad = 0.0
    penalty = 0.0
    plain = 0.0
    scale = 0.0
    for k in directions:
        d1, d2, d3, d4 = coeffs.half[k]
        dU = delta_half(U, grid, k)
        dV = delta_half(V, grid, k)
        ip = lambda p, q: inner_hk_star(p, q, grid, k)  # noqa: E731
        quad += ip(d1 * dU, dU) + ip(d2 * dV, dU) + ip(d3 * dU, dV) + ip(d4 * dV, dV)
        dmax = float(np.abs(coeffs.half[k]).max()) if coeffs.half[k].size else 0.0
        scale += dmax * (ip(dU, dU) + ip(dV, dV))
        if explicit:
            c = 4.0 * dt / grid.spacing[k] ** 2
            fu = d1 * dU + d2 * dV
            fv = d3 * dU + d4 * dV
            p1 = ip(fu, fu)
            p2 = ip(fv, fv)
            penalty += c * ((1 + eta[0]) * p1 + (1 + eta[1]) * p2)
            plain += c * (p1 + p2)
            scale += c * (p1 + p2)
    out = {"value": quad - penalty, "scale": scale}
    if explicit:
        # largest common eta with quad - (1 + eta) * plain >= 0
        out["eta_sup"] = float("inf") if plain <= 0 else float((quad - plain) / plain)
    return out


def random_probes(grid: Grid, count: int = 8, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Random probe pairs plus structured ones (``V = U``, ``V = -U``, checkerboards)."""
    rng = np.random.default_rng(seed)
    probes = []
    for _ in range(count):
        probes.append((rng.standard_normal(grid.shape), rng.standard_normal(grid.shape)))
    U = rng.standard_normal(grid.shape)
    probes += [(U, U), (U, -U), (U, np.zeros(grid.shape)), (np.zeros(grid.shape), U)]
    checker = np.indices(grid.shape).sum(axis=0) % 2 * 2.0 - 1.0
    probes += [(checker, checker), (checker, -checker)]
    return probes


def check_theorem1_form(model: InfluenceModel, theta: float, coeff_state: StateW,
                        probes: Sequence[tuple[np.ndarray, np.ndarray]] | None = None,
                        direction: int | None = None, dt: float = 0.0,
                        eta: tuple[float, float] = (1e-6, 1e-6), t_eval: float | None = None) -> Verdict:
    """Energy-form condition on probe pairs.

    ``theta >= 1/2`` checks the implicit form, ``theta == 0`` the explicit one
    with ``eta`` weights.  With ``direction`` set only that direction's terms
    are summed (the split-scheme variant).
    """
    grid = coeff_state.grid
    probes = random_probes(grid) if probes is None else probes
    explicit = theta == 0.0
    name = "energy_form" + ("" if direction is None else f"_dir{direction + 1}") + ("_explicit" if explicit else "")
    if 0.0 < theta < 0.5:
        return Verdict(name, NA, "no energy condition is stated for 0 < theta < 1/2")
    dirs = None if direction is None else [direction]
    worst = None
    eta_sup = float("inf")
    for i, (U, V) in enumerate(probes):
        res = energy_form(coeff_state, model, U, V, dirs, dt, eta, explicit, t_eval=t_eval)
        if explicit:
            eta_sup = min(eta_sup, res["eta_sup"])
        if res["value"] < -FORM_RTOL * max(res["scale"], 1e-300):
            worst = (i, res["value"])
            break
    extra = {"eta_sup": eta_sup} if explicit else {}
    if worst is not None:
        return Verdict(name, FAIL, f"form is {worst[1]:.6g} < 0 on probe {worst[0]}",
                       {"probe": worst[0], "value": worst[1]}, extra=extra)
    return Verdict(name, PASS, f"non-negative on {len(probes)} probes", extra=extra)


def lemma_matrices(k1, k2, r, d, variant: str = "lemma4", which: int = 1) -> np.ndarray:
    """2x2 matrices of the block-norm conditions, one per sample.

    ``d`` is ``(m, 2, 2)`` (already scaled to the line-matrix units).
    ``which=1`` is the first-dominates matrix, ``which=2`` the mirrored one.
    """
    c = 2.0 if variant == "lemma4" else 1.0
    out = np.zeros((len(k1), 2, 2))
    if which == 1:
        delta = k1 - k2
        out[:, 0, 0] = k1 ** 2 + 2 * c * r * delta * d[:, 0, 0]
        out[:, 0, 1] = out[:, 1, 0] = c * r * delta * d[:, 0, 1]
        out[:, 1, 1] = k2 ** 2
    else:
        delta = k2 - k1
        out[:, 0, 0] = k1 ** 2
        out[:, 0, 1] = out[:, 1, 0] = c * r * delta * d[:, 1, 0]
        out[:, 1, 1] = k2 ** 2 + 2 * c * r * delta * d[:, 1, 1]
    return out


def check_lemma45_matrices(reaction: ReactionModel, model: InfluenceModel, r: float, samples,
                           variant: str = "lemma4", strict: bool | None = None,
                           reaction_weight: float = 0.5, h: float = 1.0) -> Verdict:
    """Reaction-imbalance conditions for ``||B^{-1} U|| < 1``.

    ``k_i = 1 + reaction_weight * r * lambda_i``; influence values are scaled by
    ``1 / h^2`` to match the line matrices.  ``variant`` selects the
    full-coefficient (``lemma4``, strict by default) or the halved-coefficient
    (``lemma5``, semi-definite by default) matrices.
    """
    if variant not in ("lemma4", "lemma5"):
        raise ValueError(f"unknown variant {variant!r}")
    strict = (variant == "lemma4") if strict is None else strict
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    name = f"{variant}_matrices"
    lam1, lam2 = _reaction_values(reaction, samples)
    rel = reaction.relation
    consistent = {
        "equal": np.isclose(lam1, lam2, rtol=0, atol=1e-14),
        "first_dominates": lam1 > lam2,
        "second_dominates": lam2 > lam1,
        "sign_changes": np.ones(len(samples), dtype=bool),
    }[rel]
    if not consistent.all():
        i = int(np.argmin(consistent))
        return Verdict(name, FAIL, f"declared relation {rel!r} does not hold",
                       {"sample": samples[i].tolist(), "lambda1": float(lam1[i]), "lambda2": float(lam2[i])})
    if rel == "equal":
        return Verdict(name, PASS, "equal reaction rates: holds for every r", regime="any r")
    k1 = 1.0 + reaction_weight * r * lam1
    k2 = 1.0 + reaction_weight * r * lam2
    d = _model_matrices(model, samples) / h ** 2
    which = {"first_dominates": [1], "second_dominates": [2], "sign_changes": [1, 2]}[rel]
    for w in which:
        mats = lemma_matrices(k1, k2, r, d, variant, w)
        low = _sym_min_eig(mats)
        tol = _psd_tol(mats)
        bad = low <= tol if strict else low < -tol
        if bad.any():
            i = int(np.argmax(bad))
            return Verdict(name, FAIL, f"condition matrix {w} not positive {'definite' if strict else 'semi-definite'}",
                           {"sample": samples[i].tolist(), "matrix": mats[i].tolist(),
                            "min_eigenvalue": float(low[i])})
    return Verdict(name, PASS, f"pass on {len(samples)} samples")


def check_block_norms(systems: Iterable[BlockTridiagonalMatrix], tol: float = BLOCK_NORM_TOL) -> Verdict:
    """Empirical ``||B_1^{-1}U_1|| < 1`` and ``||B_j^{-1}U_j|| + ||B_j^{-1}L_{j-1}|| <= 1``."""
    worst = 0.0
    count = 0
    for i, A in enumerate(systems):
        count += 1
        first, sums = lemma1_quantities(A)
        worst = max(worst, float(sums.max()))
        if not first < 1.0:
            return Verdict("block_norms", FAIL, f"||B_1^-1 U_1|| = {first:.6g} >= 1",
                           {"system": i, "block": 0, "value": first})
        if (sums > 1.0 + tol).any():
            j = int(np.argmax(sums > 1.0 + tol))
            return Verdict("block_norms", FAIL, f"block-norm sum {sums[j]:.6g} > 1",
                           {"system": i, "block": j, "value": float(sums[j])})
    return Verdict("block_norms", PASS, f"max block-norm sum {worst:.6g} over {count} systems")


def check_theorem6(model: InfluenceModel, reaction: ReactionModel, r: float, samples,
                   systems: Iterable[BlockTridiagonalMatrix] | None = None,
                   reaction_weight: float = 0.5, h: float = 1.0) -> Verdict:
    """Existence and stability of the block LU factorisation.

    ``g * M`` models with PSD ``M`` need the semi-definite conditions and hold
    for any ``r``.  General PSD models need the strict conditions and, since
    those only guarantee small ``r``, the assembled ``systems`` are checked
    directly.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    psd = check_model_psd(model, samples)
    if not psd:
        return Verdict("theorem6", FAIL, "cross-diffusion matrix not PSD", psd.witness)
    M = scaled_form(model, samples)
    if M is not None and check_psd_nns(M):
        cond = check_lemma45_matrices(reaction, model, r, samples, "lemma4", strict=False,
                                      reaction_weight=reaction_weight, h=h)
        regime = "any r"
    else:
        cond = check_lemma45_matrices(reaction, model, r, samples, "lemma4", strict=True,
                                      reaction_weight=reaction_weight, h=h)
        regime = "small r"
    if not cond:
        return Verdict("theorem6", FAIL, cond.detail, cond.witness, regime=regime)
    if systems is not None:
        blocks = check_block_norms(systems)
        if not blocks:
            return Verdict("theorem6", FAIL, blocks.detail, blocks.witness, regime=regime)
        detail = f"conditions hold ({regime}); {blocks.detail}"
    else:
        detail = f"conditions hold ({regime})"
    return Verdict("theorem6", PASS, detail, regime=regime)


def scaled_form(model: InfluenceModel, samples) -> np.ndarray | None:
    """Constant ``M`` if the model is ``g * M`` with ``g >= 0`` at the samples, else ``None``.

    ``ScaledConstant`` qualifies directly; complex diffusion and general models
    qualify when their coefficient functions are constants.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if isinstance(model, ScaledConstant):
        g = np.asarray(model.g(samples[:, 0], samples[:, 1], samples[0, 2])) if len(samples) else np.zeros(0)
        return model.M if np.all(g >= 0) else None
    fns = {ComplexDiffusion: ("g", "f"), GeneralModel: ("d1", "d2", "d3", "d4")}.get(type(model))
    if fns is None or not all(hasattr(getattr(model, n), "value") for n in fns):
        return None
    return model.matrix(0.0, 0.0, 0.0)


@dataclass
class NormHistory:
    steps: list[int]
    norms: list[float]
    bound_constant: float
    verdict: str


def monitor_norms(norms: Sequence[float], C: float = 10.0, divergence: float | None = None,
                  rtol: float = 1e-12) -> NormHistory:
    """Classify a run by its norm sequence ``||W^0||, ||W^1||, ...``.

    ``monotone`` if non-increasing, ``bounded`` if ``max ||W^m|| / ||W^0|| <= C``,
    otherwise ``diverged`` (also for any non-finite value).
    """
    norms = [float(x) for x in norms]
    divergence = C if divergence is None else divergence
    steps = list(range(len(norms)))
    if not norms:
        return NormHistory(steps, norms, 1.0, "monotone")
    arr = np.asarray(norms)
    if not np.isfinite(arr).all():
        return NormHistory(steps, norms, float("inf"), "diverged")
    base = arr[0]
    ratio = float(arr.max() / base) if base > 0 else (1.0 if arr.max() == 0 else float("inf"))
    if ratio > divergence:
        verdict = "diverged"
    elif np.all(np.diff(arr) <= rtol * max(base, 1e-300)):
        verdict = "monotone"
    elif ratio <= C:
        verdict = "bounded"
    else:
        verdict = "diverged"
    return NormHistory(steps, norms, ratio, verdict)
