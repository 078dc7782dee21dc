"""Command line entry point: ``crossdiff {run,check,compare,spy,bench}``.

Exit codes: 0 success, 1 configuration or cap error, 2 divergence or a
solver deviation above tolerance.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, stability
from .blocksolve import FactorizationError
from .config import ConfigError, RunConfig, load_config
from .fieldio import write_fields
from .grid import norm_h, norm_W, weighted_sum
from .model import ComplexDiffusion, evaluate_coefficients
from .schemes import (
    DivergenceError,
    SchemeConfig,
    assemble_directional_system,
    directional_matrices,
    full_theta_system,
    step,
    sweep_parameters,
)

COMPARE_TOL = 1e-8
NORMS_HEADER = ("step", "t", "norm_U", "norm_V", "norm_W", "sum_U", "sum_V")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _norm_row(m, state):
    g = state.grid
    return [m, repr(state.t), repr(norm_h(state.U, g)), repr(norm_h(state.V, g)), repr(norm_W(state)),
            repr(weighted_sum(state.U, g)), repr(weighted_sum(state.V, g))]


def cmd_run(cfg: RunConfig) -> int:
    state = cfg.initial_state()
    model, reaction, scheme = cfg.model(), cfg.reaction(), cfg.scheme()
    out = _out_dir(cfg)
    stride = cfg["output.stride"]
    snapshots = cfg["output.snapshots"]

    def snapshot(m, st):
        if snapshots:
            write_fields(out / f"fields_{m:06d}.xdif", st.U, st.V)

    rows = [_norm_row(0, state)]
    norms = [norm_W(state)]
    snapshot(0, state)
    failure = None
    for m in range(1, scheme.steps + 1):
        try:
            state = step(state, model, reaction, scheme).state
        except (DivergenceError, FactorizationError) as exc:
            failure = f"step {m}: {exc}"
            break
        rows.append(_norm_row(m, state))
        norms.append(norm_W(state))
        if m % stride == 0 or m == scheme.steps:
            snapshot(m, state)
    with open(out / "norms.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(NORMS_HEADER)
        writer.writerows(rows)
    history = stability.monitor_norms(norms, C=cfg["check.bound"])
    verdict = "diverged" if failure else history.verdict
    lines = [cfg.to_text(), f"# verdict.norms = {verdict}\n",
             f"# verdict.bound_constant = {history.bound_constant!r}\n",
             f"# steps_completed = {len(norms) - 1}\n"]
    if failure:
        lines.append(f"# failure = {failure}\n")
    (out / "manifest.txt").write_text("".join(lines))
    print(f"{len(norms) - 1} steps, norm {norms[0]:.6g} -> {norms[-1]:.6g}, verdict {verdict}")
    if failure:
        print(f"error: {failure}", file=sys.stderr)
    return 2 if verdict == "diverged" else 0


def stability_report(cfg: RunConfig) -> stability.StabilityReport:
    state = cfg.initial_state()
    model, reaction, scheme = cfg.model(), cfg.reaction(), cfg.scheme()
    grid = state.grid
    t_eval = state.t + scheme.theta * scheme.dt
    samples = stability.samples_from_state(state)
    samples[:, 2] = t_eval
    report = stability.StabilityReport()
    report.add(stability.check_model_psd(model, samples))
    report.add(stability.check_diagonal_dominance(model, samples))
    probes = stability.random_probes(grid, cfg["check.probes"], cfg["init.seed"])
    eta = (cfg["check.eta"], cfg["check.eta"])
    if scheme.scheme == "full":
        report.add(stability.check_theorem1_form(model, scheme.theta, state, probes, dt=scheme.dt,
                                                 eta=eta, t_eval=t_eval))
    else:
        tau, weight = sweep_parameters(scheme, grid.dim)
        for k in range(grid.dim):
            report.add(stability.check_theorem1_form(model, scheme.theta, state, probes, direction=k,
                                                     dt=tau, eta=eta, t_eval=t_eval))
    if isinstance(model, ComplexDiffusion):
        bound = stability.check_explicit_bound(model, grid, scheme.dt, samples)
        if scheme.theta != 0.0:
            # only the explicit scheme is limited; keep dt_max for reference
            bound.status, bound.witness = stability.NA, None
            bound.detail = "implicit step; " + bound.detail
        report.add(bound)
    if scheme.scheme == "full":
        report.add(stability.Verdict("lemma4_matrices", stability.NA, "full theta-method has no line systems"))
        report.add(stability.Verdict("theorem6", stability.NA, "full theta-method has no line systems"))
        return report
    r = scheme.r_for(grid.dim)
    for variant in ("lemma4", "lemma5"):
        verdict = None
        for k in range(grid.dim):
            verdict = stability.check_lemma45_matrices(reaction, model, r, samples, variant,
                                                      reaction_weight=weight, h=grid.spacing[k])
            if not verdict:
                verdict.extra["direction"] = k + 1
                break
        report.add(verdict)
    coeffs = evaluate_coefficients(state, model, reaction, t_eval)
    per_direction: dict[int, list] = {k: [] for k in range(grid.dim)}
    for k, _, A in directional_matrices(state, coeffs, scheme):
        per_direction[k].append(A)
    verdicts = [stability.check_theorem6(model, reaction, r, samples, per_direction[k], weight, grid.spacing[k])
                for k in range(grid.dim)]
    worst = next((v for v in verdicts if not v), verdicts[0])
    report.add(worst)
    return report


def _format_table(report: stability.StabilityReport) -> str:
    width = max(len(v.name) for v in report.verdicts)
    lines = []
    for v in report.verdicts:
        extra = f" [{v.regime}]" if v.regime else ""
        lines.append(f"{v.name:<{width}}  {v.status:<4}  {v.detail}{extra}")
        if v.dt_max is not None:
            lines.append(f"{'':<{width}}        dt_max = {v.dt_max!r}")
        if v.witness:
            lines.append(f"{'':<{width}}        witness: {json.dumps(stability._jsonable(v.witness))}")
    return "\n".join(lines)


def cmd_check(cfg: RunConfig, out_given: bool) -> int:
    report = stability_report(cfg)
    doc = json.dumps(report.to_dict(), indent=2)
    print(_format_table(report))
    print(doc)
    if out_given:
        (_out_dir(cfg) / "check.json").write_text(doc + "\n")
    return 0


def compare_runs(cfg: RunConfig) -> list[float]:
    scheme = cfg.scheme()
    if scheme.scheme == "full":
        raise ConfigError("scheme.name", "compare needs a split scheme (aos or amos)")
    grid = cfg.grid()
    unknowns = 2 * grid.size
    if unknowns > cfg["compare.cap"]:
        raise ConfigError("compare.cap", f"{unknowns} unknowns exceed the dense oracle cap {cfg['compare.cap']}")
    model, reaction = cfg.model(), cfg.reaction()
    banded = dense = cfg.initial_state()
    cfg_b = SchemeConfig(scheme.theta, scheme.dt, scheme.scheme, "banded", parallel=scheme.parallel)
    cfg_d = SchemeConfig(scheme.theta, scheme.dt, scheme.scheme, "dense")
    deviations = []
    for _ in range(scheme.steps):
        banded = step(banded, model, reaction, cfg_b).state
        dense = step(dense, model, reaction, cfg_d).state
        deviations.append(float(np.abs(banded.W - dense.W).max()))
    return deviations


def cmd_compare(cfg: RunConfig, out_given: bool) -> int:
    try:
        deviations = compare_runs(cfg)
    except (DivergenceError, FactorizationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print("step,max_abs_diff")
    for m, d in enumerate(deviations, start=1):
        print(f"{m},{d!r}")
    if out_given:
        with open(_out_dir(cfg) / "compare.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("step", "max_abs_diff"))
            writer.writerows((m, repr(d)) for m, d in enumerate(deviations, start=1))
    worst = max(deviations, default=0.0)
    print(f"max deviation {worst:.3e} (tolerance {COMPARE_TOL:g})")
    return 2 if worst > COMPARE_TOL else 0


def _write_coo(path: Path, rows, cols, vals) -> None:
    with open(path, "w") as fh:
        for r, c, v in zip(rows, cols, vals):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")


def cmd_spy(cfg: RunConfig) -> int:
    state = cfg.initial_state()
    model, reaction, scheme = cfg.model(), cfg.reaction(), cfg.scheme()
    grid = state.grid
    coeffs = evaluate_coefficients(state, model, reaction, state.t + scheme.theta * scheme.dt)
    out = _out_dir(cfg)
    M, _ = full_theta_system(state, coeffs, scheme.theta, scheme.dt)
    M = M.tocoo()
    keep = M.data != 0
    order = np.lexsort((M.col[keep], M.row[keep]))
    _write_coo(out / "spy_full.txt", M.row[keep][order], M.col[keep][order], M.data[keep][order])
    split = scheme if scheme.scheme != "full" else SchemeConfig(scheme.theta, scheme.dt, "aos")
    tau, weight = sweep_parameters(split, grid.dim)
    k = cfg["spy.direction"] - 1
    nlines = grid.size // grid.shape[k]
    if not 0 <= cfg["spy.line"] < nlines:
        raise ConfigError("spy.line", f"line index must lie in [0, {nlines})")
    system = assemble_directional_system(state, coeffs, k, cfg["spy.line"], tau, scheme.theta, weight)
    D = system.matrix.to_dense()
    rows, cols = np.nonzero(D)
    _write_coo(out / "spy_direction.txt", rows, cols, D[rows, cols])
    print(f"wrote {out / 'spy_full.txt'} ({keep.sum()} entries) and {out / 'spy_direction.txt'} ({len(rows)} entries)")
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    cells = bench.cell_matrix(cfg["bench.schemes"], cfg["bench.solvers"], cfg["bench.sizes"], cfg["bench.dim"])
    if not cells:
        raise ConfigError("bench.schemes", "no valid scheme/solver combination")
    records = bench.run_benchmark(cells, cfg.model(), cfg.reaction(), theta=cfg["scheme.theta"],
                                  dt=cfg["scheme.dt"], warmup=cfg["bench.warmup"],
                                  repetitions=cfg["bench.repetitions"], seed=cfg["init.seed"],
                                  parallel=cfg["scheme.parallel"], full_cap=cfg["bench.full_cap"],
                                  whole_step=cfg["bench.whole_step"])
    path = _out_dir(cfg) / "bench.csv"
    bench.write_csv(records, path)
    sys.stdout.write(path.read_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat section.key = value configuration file")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="seed for synthetic initial data (overrides init.seed)")
    common.add_argument("--parallel", action="store_true", help="solve independent lines in parallel")
    parser = argparse.ArgumentParser(prog="crossdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="time-step a configured problem")
    sub.add_parser("check", parents=[common], help="evaluate the stability conditions")
    sub.add_parser("compare", parents=[common], help="banded solver against the dense oracle")
    sub.add_parser("spy", parents=[common], help="dump full and directional matrices as row col value")
    sub.add_parser("bench", parents=[common], help="time schemes and solvers, write CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.out is not None:
        overrides["output.dir"] = args.out
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return 1
        overrides["init.seed"] = args.seed
    if args.parallel:
        overrides["scheme.parallel"] = True
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "check":
            return cmd_check(cfg, args.out is not None)
        if args.command == "compare":
            return cmd_compare(cfg, args.out is not None)
        if args.command == "spy":
            return cmd_spy(cfg)
        return cmd_bench(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
