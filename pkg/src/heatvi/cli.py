"""Command-line harness: validate and run configured experiments.

Every experiment writes CSV tables, a plain-text run summary (key=value
lines) and a manifest listing each artifact with its SHA-256 hash.  For a
fixed configuration and seed the CSV and summary bodies are byte-identical
across runs; only the manifest carries a timestamp.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import control, fem, geometry, laws, solver, tykhonov


def _write_rows(path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
    return Path(path)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_summary(outdir: Path, lines) -> Path:
    path = outdir / "summary.txt"
    with open(path, "w") as fh:
        for line in lines:
            fh.write(line + "\n")
    return path


def _write_manifest(outdir: Path, paths) -> Path:
    manifest = outdir / "manifest.txt"
    with open(manifest, "w") as fh:
        fh.write(f"# generated {time.strftime('%Y-%m-%dT%H:%M:%S%z')}\n")
        for path in sorted(paths, key=lambda p: p.name):
            digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
            size = Path(path).stat().st_size
            fh.write(f"{digest} {size} {path.name}\n")
    return manifest


def _field_csv(path, values) -> Path:
    return _write_rows(path, ["node", "value"],
                       [[i, _fmt(float(v))] for i, v in enumerate(values)])


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def _cost_spec(cfg, problem) -> control.CostSpec:
    target = fem.nodal_field(problem.ops.mesh,
                             cfgmod.field_expression(cfg.target_expr, ("x2",)))

    def omega(mu, slope=cfg.omega_slope):
        return 1.0 + slope * mu

    return control.CostSpec(a0=cfg.a0, a2=cfg.a2, target_trace=target,
                            omega=omega, mu=cfg.mu)


def _run_solve(cfg, problem, outdir):
    rep = solver.solve(problem, tol=cfg.outer_tol, max_outer=cfg.max_outer)
    paths = [outdir / "solution.csv"]
    solver.solution_csv(rep, paths[0])
    paths += geometry.dump_mesh_csv(problem.ops.mesh, outdir)
    lines = [
        f"outer_iters={rep.outer_iters}",
        f"final_increment={_fmt(rep.final_increment)}",
        f"residual={_fmt(rep.residual)}",
        f"min_value={_fmt(float(np.min(rep.solution)))}",
        f"max_value={_fmt(float(np.max(rep.solution)))}",
    ]
    return paths, lines


def _run_penalty_curve(cfg, problem, outdir):
    rows = tykhonov.penalty_convergence_curve(problem, cfg.lambdas)
    paths = [outdir / "curve.csv", outdir / "plot.dat"]
    tykhonov.curve_csv(rows, paths[0])
    tykhonov.plot_data(paths[1], [r["lam"] for r in rows], [r["error"] for r in rows])
    lines = [
        f"first_error={_fmt(rows[0]['error'])}",
        f"last_error={_fmt(rows[-1]['error'])}",
        f"last_negative_gap={_fmt(rows[-1]['negative_gap'])}",
        f"last_boundary_gap={_fmt(rows[-1]['boundary_gap'])}",
    ]
    return paths, lines


def _run_approx_sequence(cfg, problem, outdir):
    mesh = problem.ops.mesh
    base_f = problem.f
    if cfg.rule == "constant":
        rule = tykhonov.constant_sources(base_f)
    elif cfg.rule == "weak_oscillation":
        rule = tykhonov.oscillating_sources(mesh, base_f, cfg.amplitude)
    elif cfg.rule == "strong_perturb":
        bump = fem.nodal_field(mesh, lambda x1, x2: np.sin(np.pi * x1 / mesh.alpha))
        rule = tykhonov.shrinking_sources(base_f, bump, cfg.amplitude)
    else:
        raise ValueError(f"unknown sequence rule {cfg.rule!r}")

    spec = tykhonov.ApproxSequenceSpec(problem=problem, lambdas=cfg.lambdas,
                                       source_rule=rule, target_f=base_f)
    record = tykhonov.run_approximating_sequence(spec, cfg.count)
    paths = [outdir / "sequence.csv"]
    tykhonov.sequence_csv(record, paths[0])
    lines = [f"approximating={record.approximating}"]
    if record.rows:
        paths.append(outdir / "plot.dat")
        tykhonov.plot_data(paths[1], [r["n"] for r in record.rows],
                           [r["error"] for r in record.rows])
        lines += [f"final_error={_fmt(record.final_error)}",
                  f"monotone_tail={record.monotone_tail}"]
    else:
        lines.append(f"reason={record.reason}")
    return paths, lines


def _run_control(cfg, problem, outdir):
    spec = _cost_spec(cfg, problem)
    param = control.make_control_param(
        problem.ops, control.cosine_basis(problem.ops.mesh, cfg.basis_size))
    rep = control.solve_control(problem, spec, param, starts=cfg.starts,
                                seed=cfg.seed, theta_scale=cfg.theta_scale,
                                state_tol=cfg.outer_tol)
    paths = [outdir / "trace.csv", outdir / "best_u.csv", outdir / "best_f.csv"]
    control.trace_csv(rep, paths[0])
    _field_csv(paths[1], rep.best_u)
    _field_csv(paths[2], rep.best_f)
    lines = [
        f"best_cost={_fmt(rep.best_cost)}",
        f"coercivity_margin={_fmt(rep.coercivity_margin)}",
        f"admissibility_residual={_fmt(rep.admissibility_residual)}",
        "best_theta=" + ",".join(_fmt(t) for t in rep.best_theta),
        f"failed_starts={sum(1 for s in rep.starts if s.failed)}",
    ]
    return paths, lines


def _run_mu_convergence(cfg, problem, outdir):
    spec = _cost_spec(cfg, problem)
    param = control.make_control_param(
        problem.ops, control.cosine_basis(problem.ops.mesh, cfg.basis_size))
    rows, ref = control.mu_convergence(problem, spec, param, cfg.mus, cfg.lambdas,
                                       starts=cfg.starts, seed=cfg.seed,
                                       theta_scale=cfg.theta_scale,
                                       state_tol=cfg.outer_tol)
    paths = [_write_rows(outdir / "mu_curve.csv",
                         ["n", "mu", "lambda", "cost_gap", "state_gap"],
                         [[r["n"], _fmt(r["mu"]), _fmt(r["lam"]),
                           _fmt(r["cost_gap"]), _fmt(r["state_gap"])] for r in rows])]
    lines = [f"reference_cost={_fmt(ref.best_cost)}",
             f"final_cost_gap={_fmt(rows[-1]['cost_gap'])}"]
    return paths, lines


def _run_oracle_check(cfg, problem, outdir):
    mesh = problem.ops.mesh
    g2_x2 = mesh.nodes[problem.ops.gamma2_nodes, 1]
    rows = []
    worst = 0.0
    for trial in range(cfg.oracle_trials):
        rng = _rng(cfg.seed, 7000 + trial)
        f = rng.uniform(-10.0, 2.0, size=mesh.n_nodes)
        knots = rng.uniform(0.0, 2.0, size=g2_x2.size)
        datum = laws.dirichlet_ramp(lambda x2: np.interp(x2, g2_x2, knots), mesh)
        trial_problem = dataclasses.replace(problem, f=f, datum=datum)
        u_solver = solver.solve(trial_problem, tol=cfg.outer_tol,
                                max_outer=cfg.max_outer).solution
        u_oracle = solver.brute_force_oracle(trial_problem)
        gap = float(np.max(np.abs(u_solver - u_oracle)))
        worst = max(worst, gap)
        rows.append([trial, _fmt(gap)])
    paths = [_write_rows(outdir / "oracle.csv", ["trial", "max_diff"], rows)]
    return paths, [f"trials={cfg.oracle_trials}", f"worst_gap={_fmt(worst)}"]


def _run_g_axioms(cfg, problem, outdir):
    report = solver.check_penalty_axioms(problem, trials=cfg.axiom_trials, seed=cfg.seed)
    paths = [_write_rows(outdir / "axioms.csv",
                         ["trials", "sign_violations", "monotone_violations",
                          "witness_violations", "max_pairing", "min_monotone"],
                         [[report["trials"], report["sign_violations"],
                           report["monotone_violations"], report["witness_violations"],
                           _fmt(report["max_pairing"]), _fmt(report["min_monotone"])]])]
    return paths, [f"violations={report['violations']}"]


_RUNNERS = {
    "solve": _run_solve,
    "penalty_curve": _run_penalty_curve,
    "approx_sequence": _run_approx_sequence,
    "control": _run_control,
    "mu_convergence": _run_mu_convergence,
    "oracle_check": _run_oracle_check,
    "g_axioms": _run_g_axioms,
}


def run_experiment(cfg: cfgmod.ExperimentConfig, outdir) -> Path:
    """Execute one experiment and return the manifest path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    problem = cfgmod.make_problem(cfg)
    paths, lines = _RUNNERS[cfg.kind](cfg, problem, outdir)
    header = [f"experiment={cfg.kind}", f"seed={cfg.seed}", f"config={Path(cfg.path).name}"]
    summary = _write_summary(outdir, header + lines)
    return _write_manifest(outdir, list(paths) + [summary])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="heatvi",
        description="Constrained heat-transfer experiments: solves, penalty curves, "
                    "approximating sequences, optimal control.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="validate and run an experiment configuration")
    run_p.add_argument("config", help="path to the INI configuration")
    run_p.add_argument("--out", default=None, help="output directory (overrides config)")
    run_p.add_argument("--seed", type=int, default=None, help="seed override")
    run_p.add_argument("--threads", type=int, default=1,
                       help="worker cap (execution is serial and deterministic)")

    val_p = sub.add_parser("validate", help="check a configuration without solving")
    val_p.add_argument("config", help="path to the INI configuration")

    args = parser.parse_args(argv)

    try:
        cfg = cfgmod.load_config(args.config)
    except (ValueError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    diags = cfgmod.validate(cfg)
    if args.command == "validate":
        if diags:
            for d in diags:
                print(f"invalid: {d}")
            return 2
        print("ok")
        for line in cfgmod.resolved_defaults(cfg):
            print(line)
        return 0

    if diags:
        for d in diags:
            print(f"invalid: {d}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads < 1:
        print("invalid: --threads must be >= 1", file=sys.stderr)
        return 2
    outdir = Path(args.out) if args.out else Path(cfg.out)

    try:
        manifest = run_experiment(cfg, outdir)
    except (solver.ConvergenceError, fem.NumericError, fem.AssemblyError,
            solver.OracleInconsistencyError, ValueError) as exc:
        print(f"error [{cfg.kind}]: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
