"""Optimal heating control constrained by the state inequality.

The cost is a weighted sum of the source energy in the domain and the
squared mismatch of the temperature trace on the right edge against a
target profile, optionally rescaled by a perturbation factor omega(mu)
with omega(0) = 1.  The source is parametrized over a small fixed basis
and minimized by derivative-free multistart simplex search; every
evaluation solves the state problem, in exact mode for the nominal
problem or in a penalty mode for the perturbed one.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .fem import FeOperators, l2_norm, nodal_field, v_norm
from .solver import ConstraintMode, ConvergenceError, HviProblem, solve


@dataclass(frozen=True)
class CostSpec:
    """Quadratic cost a0*||f||^2 + a2*||trace(u) - omega(mu)*target||^2.

    ``target_trace`` is a nodal field whose right-edge values define the
    target profile; ``omega`` must be continuous with omega(0) = 1, so the
    unperturbed cost is recovered exactly at mu = 0.
    """

    a0: float
    a2: float
    target_trace: np.ndarray
    omega: Callable[[float], float] = lambda mu: 1.0 + mu
    mu: float = 0.0

    def __post_init__(self):
        if not (self.a0 > 0.0 and self.a2 > 0.0):
            raise ValueError(f"cost weights must be positive, got a0={self.a0}, a2={self.a2}")
        if self.mu < 0.0:
            raise ValueError(f"perturbation parameter must be nonnegative, got {self.mu}")
        if abs(self.omega(0.0) - 1.0) > 1e-12:
            raise ValueError("omega(0) must equal 1")


def eval_cost(ops: FeOperators, spec: CostSpec, u: np.ndarray, f: np.ndarray) -> float:
    """Evaluate the (possibly perturbed) cost at a state/source pair.

    The domain term uses the mass matrix, the boundary term the right-edge
    mass matrix, so the value is never below a0*||f||^2.
    """
    u = np.asarray(u, dtype=float)
    f = np.asarray(f, dtype=float)
    d = u - spec.omega(spec.mu) * spec.target_trace
    return (spec.a0 * float(f @ (ops.mass @ f))
            + spec.a2 * float(d @ (ops.gamma2_mass @ d)))


def cosine_basis(mesh, m: int) -> np.ndarray:
    """First m tensor-cosine fields cos(i pi x1/alpha) cos(j pi x2/beta).

    Modes are ordered by total degree, then by maximal degree, starting
    from the constant.  L2-orthogonal on the rectangle, so the basis stays
    well conditioned.
    """
    if not 1 <= m <= 12:
        raise ValueError(f"basis size must be between 1 and 12, got {m}")
    pairs = sorted(((i, j) for i in range(4) for j in range(4)),
                   key=lambda p: (p[0] + p[1], max(p), p[0]))[:m]
    rows = [nodal_field(mesh, lambda x1, x2, i=i, j=j:
                        np.cos(i * np.pi * x1 / mesh.alpha)
                        * np.cos(j * np.pi * x2 / mesh.beta))
            for i, j in pairs]
    return np.array(rows)


@dataclass(frozen=True)
class ControlParam:
    """Source parametrization f = sum_j theta_j * basis_j over m <= 12 fields."""

    basis: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def synthesize(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(theta, dtype=float) @ self.basis


def make_control_param(ops: FeOperators, basis: np.ndarray) -> ControlParam:
    """Validate and wrap a control basis (independence via the L2 Gram matrix)."""
    basis = np.asarray(basis, dtype=float)
    if basis.ndim != 2 or basis.shape[1] != ops.n_nodes:
        raise ValueError("basis must be (m, n_nodes)")
    m = basis.shape[0]
    if not 1 <= m <= 12:
        raise ValueError(f"control dimension must be between 1 and 12, got {m}")
    gram = basis @ (ops.mass @ basis.T)
    cond = float(np.linalg.cond(gram))
    if not cond < 1e8:
        raise ValueError(f"control basis nearly dependent: Gram condition {cond:.3e}")
    return ControlParam(basis=basis)


@dataclass
class StartRecord:
    index: int
    theta0: np.ndarray
    theta: np.ndarray
    cost: float
    n_evals: int
    failed: bool = False
    message: str = ""


@dataclass
class OptReport:
    """Multistart outcome: best admissible pair plus per-start records."""

    best_theta: np.ndarray
    best_f: np.ndarray
    best_u: np.ndarray
    best_cost: float
    starts: list
    trace: list = field(repr=False, default_factory=list)
    coercivity_margin: float = np.inf
    admissibility_residual: float = np.nan
    state_tol: float = 1e-10


class _StartFailure(Exception):
    pass


class _Tracker:
    """Records every evaluation: running best and the coercivity margin."""

    def __init__(self, ops, spec, start_index, trace):
        self.ops = ops
        self.spec = spec
        self.start_index = start_index
        self.trace = trace
        self.n_evals = 0
        self.best = None  # (cost, theta, f, u)
        self.margin = np.inf

    def record(self, theta, f, u, cost):
        self.n_evals += 1
        energy = self.spec.a0 * float(f @ (self.ops.mass @ f))
        self.margin = min(self.margin, cost - energy)
        if self.best is None or cost < self.best[0]:
            self.best = (cost, theta.copy(), f, u)
        self.trace.append((self.start_index, self.n_evals, self.best[0]))


def solve_control(problem: HviProblem, spec: CostSpec, param: ControlParam,
                  starts: int = 8, seed: int = 0, theta_scale: float = 1.0,
                  state_tol: float = 1e-10, fatol: float = 1e-10,
                  xatol: float = 1e-8, maxfev: Optional[int] = None) -> OptReport:
    """Minimize the cost over the control coefficients by multistart simplex.

    Start points are drawn from a counter-based generator keyed by (seed,
    start index), so runs are reproducible and starts are independent.  A
    state-solver failure marks that start as failed; if every start fails a
    ConvergenceError is raised.  The best pair is re-solved once to record
    its admissibility residual.
    """
    m = param.dim
    maxfev = maxfev or 800 * m
    trace: list = []
    records: list[StartRecord] = []
    best: Optional[tuple] = None
    margin = np.inf

    for s in range(starts):
        rng = np.random.Generator(np.random.Philox(
            key=np.array([seed, 1000 + s], dtype=np.uint64)))
        theta0 = rng.uniform(-theta_scale, theta_scale, size=m)
        tracker = _Tracker(problem.ops, spec, s, trace)

        def objective(theta, tracker=tracker):
            f = param.synthesize(theta)
            try:
                rep = solve(dataclasses.replace(problem, f=f), tol=state_tol)
            except ConvergenceError as exc:
                raise _StartFailure(str(exc)) from exc
            cost = eval_cost(problem.ops, spec, rep.solution, f)
            tracker.record(np.asarray(theta, dtype=float), f, rep.solution, cost)
            return cost

        try:
            res = minimize(objective, theta0, method="Nelder-Mead",
                           options={"xatol": xatol, "fatol": fatol,
                                    "maxfev": maxfev, "maxiter": maxfev})
        except _StartFailure as exc:
            records.append(StartRecord(s, theta0, theta0, np.inf,
                                       tracker.n_evals, failed=True, message=str(exc)))
            continue

        cost_s, theta_s, f_s, u_s = tracker.best
        margin = min(margin, tracker.margin)
        records.append(StartRecord(s, theta0, theta_s, cost_s, tracker.n_evals))
        if best is None or cost_s < best[0]:
            best = (cost_s, theta_s, f_s, u_s)

    if best is None:
        raise ConvergenceError("every optimization start failed")

    best_cost, best_theta, best_f, best_u = best
    recheck = solve(dataclasses.replace(problem, f=best_f), tol=state_tol)
    residual = v_norm(problem.ops, best_u - recheck.solution)

    return OptReport(best_theta=best_theta, best_f=best_f, best_u=best_u,
                     best_cost=best_cost, starts=records, trace=trace,
                     coercivity_margin=margin, admissibility_residual=residual,
                     state_tol=state_tol)


def mu_convergence(problem: HviProblem, spec: CostSpec, param: ControlParam,
                   mus: Sequence[float], lambdas: Sequence[float],
                   starts: int = 8, seed: int = 0, theta_scale: float = 1.0,
                   **opt_kwargs) -> tuple[list[dict], OptReport]:
    """Perturbed optimal pairs against the unperturbed reference.

    ``problem`` must be a penalty-mode template; for each n the cost is
    perturbed with mu_n and the admissible set penalized with lambda_n.
    Rows record the unperturbed-cost gap and the state distance to the
    reference pair, which solves the exact problem with mu = 0 once.
    """
    if problem.mode is ConstraintMode.EXACT:
        raise ValueError("perturbation experiments need a penalty-mode template")
    if len(mus) != len(lambdas):
        raise ValueError("mu and lambda schedules must have equal length")

    exact = dataclasses.replace(problem, mode=ConstraintMode.EXACT,
                                domain_penalty=None, boundary_penalty=None, lam=1.0)
    spec0 = dataclasses.replace(spec, mu=0.0)
    ref = solve_control(exact, spec0, param, starts=starts, seed=seed,
                        theta_scale=theta_scale, **opt_kwargs)

    rows = []
    for n, (mu, lam) in enumerate(zip(mus, lambdas), start=1):
        pert = solve_control(dataclasses.replace(problem, lam=float(lam)),
                             dataclasses.replace(spec, mu=float(mu)),
                             param, starts=starts, seed=seed + n,
                             theta_scale=theta_scale, **opt_kwargs)
        cost_gap = eval_cost(problem.ops, spec0, pert.best_u, pert.best_f) - ref.best_cost
        rows.append({
            "n": n, "mu": float(mu), "lam": float(lam),
            "cost_gap": cost_gap,
            "state_gap": v_norm(problem.ops, pert.best_u - ref.best_u),
            "perturbed_cost": pert.best_cost,
        })
    return rows, ref


def solution_set_probe(problem: HviProblem, spec: CostSpec, param: ControlParam,
                       starts: int = 8, seed: int = 0, rel_tol: float = 1e-6,
                       **opt_kwargs) -> dict:
    """Cluster the multistart minimizers near the best cost.

    Collects every start whose final cost is within rel_tol (relative) of
    the best, reports the diameter of this near-optimal set in the product
    norm of state and source, and checks the coercivity bound
    a0*||f||^2 <= best_cost + 1e-6 on each member.
    """
    report = solve_control(problem, spec, param, starts=starts, seed=seed, **opt_kwargs)
    best = report.best_cost
    near = [r for r in report.starts
            if not r.failed and r.cost <= best + rel_tol * max(abs(best), 1e-30)]

    pairs = []
    for r in near:
        f = param.synthesize(r.theta)
        u = solve(dataclasses.replace(problem, f=f), tol=report.state_tol).solution
        pairs.append((u, f, r.cost))

    diameter = 0.0
    for i in range(len(pairs)):
        for j in range(i + 1, len(pairs)):
            du = v_norm(problem.ops, pairs[i][0] - pairs[j][0])
            df = l2_norm(problem.ops, pairs[i][1] - pairs[j][1])
            diameter = max(diameter, float(np.hypot(du, df)))

    coercivity_ok = all(
        spec.a0 * float(f @ (problem.ops.mass @ f)) <= best + 1e-6
        for _, f, _ in pairs)

    return {"report": report, "near_optimal": len(pairs), "diameter": diameter,
            "coercivity_ok": coercivity_ok, "pairs": pairs}


def trace_csv(report: OptReport, path) -> None:
    """Optimization trace as 'start,iter,cost' CSV (running best per start)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "iter", "cost"])
        for s, i, c in report.trace:
            w.writerow([s, i, f"{c:.17g}"])
