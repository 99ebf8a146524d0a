"""Approximating-sequence experiments for the constrained inequality.

An approximating sequence is built from indices (lambda_n, f_n) with
lambda_n decreasing to zero and f_n converging weakly; its members solve
the penalized problem at each index.  The experiments here measure the
decay of the error to the exact-constraint solution, certify weak
convergence of the data operationally through a fixed probe family, and
report where the decay meets the discretization floor.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import fem, geometry
from .fem import assemble, l2_norm, nodal_field, v_norm
from .laws import dirichlet_ramp
from .solver import ConstraintMode, ConvergenceError, HviProblem, SolveReport, solve


@dataclass(frozen=True)
class TykhonovIndex:
    """One index of an approximating family: penalty parameter and source."""

    lam: float
    f: np.ndarray

    def __post_init__(self):
        if not self.lam > 0.0:
            raise ValueError(f"penalty parameter must be positive, got {self.lam}")


@dataclass
class ApproxSequenceSpec:
    """Data of one approximating-sequence experiment.

    ``problem`` is the penalized template whose source and penalty
    parameter are replaced per index.  ``source_rule`` maps the 1-based
    index n to the source field f_n; ``target_f`` is the limit source, for
    which the exact-constraint problem is solved once as reference.
    """

    problem: HviProblem
    lambdas: Sequence[float]
    source_rule: Callable[[int], np.ndarray]
    target_f: np.ndarray


@dataclass
class ConvergenceRecord:
    """Per-index gaps and errors of one experiment run."""

    rows: list
    approximating: bool
    reason: str
    final_error: float
    monotone_tail: bool


def constant_sources(base_f: np.ndarray) -> Callable[[int], np.ndarray]:
    """Rule f_n = f for all n."""
    return lambda n: base_f


def oscillating_sources(mesh, base_f: np.ndarray, amplitude: float = 1.0):
    """Rule f_n = f + A sin(n pi x1 / alpha): weakly but not strongly vanishing."""

    def rule(n: int) -> np.ndarray:
        wave = nodal_field(mesh, lambda x1, x2: np.sin(n * np.pi * x1 / mesh.alpha))
        return base_f + amplitude * wave

    return rule


def shrinking_sources(base_f: np.ndarray, g: np.ndarray, eps0: float = 1.0):
    """Rule f_n = f + (eps0/n) g: strongly vanishing perturbation."""
    return lambda n: base_f + (eps0 / n) * g


def probe_fields(ops) -> list[np.ndarray]:
    """Fixed probe family (first five interpolated polynomials).

    Weak convergence of the sources is certified operationally: the
    pairings against these probes must vanish while the L2 norm of the
    perturbation need not.
    """
    mesh = ops.mesh
    fns = [
        lambda x1, x2: np.ones_like(x1),
        lambda x1, x2: x1,
        lambda x1, x2: x2,
        lambda x1, x2: x1 * x1,
        lambda x1, x2: x1 * x2,
    ]
    return [nodal_field(mesh, fn) for fn in fns]


def _exact_reference(problem: HviProblem, f: np.ndarray) -> SolveReport:
    exact = dataclasses.replace(problem, mode=ConstraintMode.EXACT,
                                domain_penalty=None, boundary_penalty=None,
                                lam=1.0, f=f)
    return solve(exact)


def run_approximating_sequence(spec: ApproxSequenceSpec, count: int) -> ConvergenceRecord:
    """Solve the penalized problem along the index sequence and record gaps.

    The index criterion requires the penalty parameters to decrease
    strictly toward zero; a schedule violating this is refused and the
    record comes back flagged as not an approximating sequence, with no
    rows.  Otherwise each row holds (n, lambda_n, weak gap, strong gap,
    error to the exact reference).
    """
    if count < 3:
        raise ValueError("need at least 3 indices for a meaningful sequence")
    if len(spec.lambdas) < count:
        raise ValueError(f"schedule provides {len(spec.lambdas)} penalty parameters, need {count}")
    lambdas = [float(l) for l in spec.lambdas[:count]]
    if any(l <= 0.0 for l in lambdas):
        return ConvergenceRecord([], False, "penalty parameters must be positive",
                                 float("nan"), False)
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])) or lambdas[-1] >= lambdas[0]:
        return ConvergenceRecord([], False,
                                 "not an approximating sequence: penalty parameters "
                                 "do not decrease strictly toward zero",
                                 float("nan"), False)

    ops = spec.problem.ops
    probes = probe_fields(ops)
    u_ref = _exact_reference(spec.problem, spec.target_f).solution

    rows = []
    for n in range(1, count + 1):
        f_n = np.asarray(spec.source_rule(n), dtype=float)
        try:
            rep = solve(dataclasses.replace(spec.problem, f=f_n, lam=lambdas[n - 1]))
        except ConvergenceError as exc:
            raise ConvergenceError(f"sequence solve failed at index {n}: {exc}",
                                   exc.q_history) from exc
        df = f_n - spec.target_f
        weak_gap = max(abs(float(df @ (ops.mass @ w))) for w in probes)
        strong_gap = l2_norm(ops, df)
        error = v_norm(ops, rep.solution - u_ref)
        rows.append({"n": n, "lam": lambdas[n - 1], "weak_gap": weak_gap,
                     "strong_gap": strong_gap, "error": error})

    errors = [r["error"] for r in rows]
    tail = errors[len(errors) // 2:]
    monotone_tail = all(b <= a * (1.0 + 1e-12) + 1e-15 for a, b in zip(tail, tail[1:]))
    return ConvergenceRecord(rows, True, "", errors[-1], monotone_tail)


def penalty_convergence_curve(problem: HviProblem, lambdas: Sequence[float]) -> list[dict]:
    """Error and feasibility gaps of the penalized solution along a schedule.

    For each lambda the penalized problem is solved with the template's
    fixed source and compared in the full H1 norm against the
    exact-constraint solution on the same mesh.  Each row also records the
    feasibility gaps: the L2 norm of the negative part in the domain and
    the L2 mismatch of the trace on the right edge.

    When the schedule spans at least four decades the last error must not
    exceed a hundredth of the first one, otherwise ConvergenceError is
    raised.
    """
    if problem.mode is ConstraintMode.EXACT:
        raise ValueError("penalty curves need a penalized template")
    lambdas = [float(l) for l in lambdas]
    if not lambdas or any(l <= 0.0 for l in lambdas):
        raise ValueError("penalty schedule must be positive")

    ops = problem.ops
    u_ref = _exact_reference(problem, problem.f).solution
    b = problem.datum.boundary_values

    rows = []
    for lam in lambdas:
        rep = solve(dataclasses.replace(problem, lam=lam))
        u = rep.solution
        rows.append({
            "lam": lam,
            "error": v_norm(ops, u - u_ref),
            "negative_gap": l2_norm(ops, np.minimum(u, 0.0)),
            "boundary_gap": fem.gamma2_norm(ops, u - b),
        })

    if max(lambdas) / min(lambdas) >= 1e4:
        first, last = rows[0]["error"], rows[-1]["error"]
        if last > first / 100.0:
            raise ConvergenceError(
                f"penalty convergence too slow: error went {first:.3e} -> {last:.3e} "
                f"over {max(lambdas) / min(lambdas):.1e} decades of the parameter")
    return rows


def membership_check(problem: HviProblem, theta: TykhonovIndex, u: np.ndarray,
                     tol: float) -> bool:
    """Whether u is (up to tol in the H1 norm) the solution at the index.

    The penalized problem has a unique solution at each index, so
    membership in the approximating set reduces to closeness to the
    computed solution.
    """
    rep = solve(dataclasses.replace(problem, f=theta.f, lam=theta.lam))
    return v_norm(problem.ops, np.asarray(u, dtype=float) - rep.solution) <= tol


def discretization_floor(problem: HviProblem) -> float:
    """Two-mesh estimate of the discretization error of the exact solve.

    Solves the exact-constraint problem on the template's mesh and on its
    uniform refinement (data prolonged / re-interpolated), and returns the
    H1 distance on the fine mesh.  Convergence of penalty curves is only
    asserted down to this floor.
    """
    mesh = problem.ops.mesh
    fine_mesh = geometry.build_rect_mesh(mesh.alpha, mesh.beta, 2 * mesh.nx, 2 * mesh.ny)
    fine_ops = assemble(fine_mesh)
    fine_datum = dirichlet_ramp(problem.datum.profile, fine_mesh)
    fine_problem = HviProblem(mesh=fine_mesh, ops=fine_ops,
                              f=geometry.prolong(mesh, fine_mesh, problem.f),
                              datum=fine_datum, law=problem.law,
                              mode=ConstraintMode.EXACT)
    u_fine = solve(fine_problem).solution
    u_coarse = _exact_reference(problem, problem.f).solution
    return v_norm(fine_ops, geometry.prolong(mesh, fine_mesh, u_coarse) - u_fine)


def sequence_csv(record: ConvergenceRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "lambda", "weak_gap", "strong_gap", "error"])
        for r in record.rows:
            w.writerow([r["n"], f"{r['lam']:.17g}", f"{r['weak_gap']:.17g}",
                        f"{r['strong_gap']:.17g}", f"{r['error']:.17g}"])


def curve_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "error", "negative_gap", "boundary_gap"])
        for r in rows:
            w.writerow([f"{r['lam']:.17g}", f"{r['error']:.17g}",
                        f"{r['negative_gap']:.17g}", f"{r['boundary_gap']:.17g}"])


def plot_data(path, xs, ys) -> None:
    """Two-column whitespace plot data."""
    with open(path, "w") as fh:
        for x, y in zip(xs, ys):
            fh.write(f"{x:.17g} {y:.17g}\n")
