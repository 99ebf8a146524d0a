"""Fixed-point solver for the discrete constrained heat-transfer inequality.

The discrete problem is posed either on the exact constraint set (nodal
nonnegativity in the domain plus prescribed values on the right edge) or on
one of three relaxed sets where constraints are replaced by monotone
penalty terms scaled by 1/lambda.

The nonsmooth boundary term is handled by an outer Banach iteration: at
each step the subgradient of the heat-exchange law is frozen at the
current iterate and the remaining convex inner problem is solved exactly.
Under the solvability (smallness) condition checked at construction the
outer map is a contraction and the per-step ratios are recorded.

Inner solvers: projected SOR for the modes with bound constraints,
semismooth Newton on the piecewise-linear system for the modes without.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .fem import FeOperators, v_norm
from .laws import BoundaryLaw, DirichletDatum, PenaltyKind, PenaltyLaw


class ConvergenceError(RuntimeError):
    """Solver failed to converge; carries the recorded contraction ratios."""

    def __init__(self, message, q_history=None):
        super().__init__(message)
        self.q_history = list(q_history) if q_history is not None else []


class OracleInconsistencyError(RuntimeError):
    """The enumeration oracle found no valid active set (assembly bug)."""


class ConstraintMode(Enum):
    """Which constraints are kept exactly and which are penalized."""

    EXACT = "exact"                        # u >= 0 in D and u = b on the right edge
    PENALTY_DOMAIN = "penalty_domain"      # u = b kept, nonnegativity penalized
    PENALTY_BOUNDARY = "penalty_boundary"  # nonnegativity kept, u = b penalized
    PENALTY_FULL = "penalty_full"          # both penalized, unconstrained space


#: modes whose discrete set carries nodal lower bounds
_BOUND_MODES = (ConstraintMode.EXACT, ConstraintMode.PENALTY_BOUNDARY)
#: modes that eliminate the right-edge values exactly
_G2_FIXED_MODES = (ConstraintMode.EXACT, ConstraintMode.PENALTY_DOMAIN)


@dataclass(frozen=True)
class HviProblem:
    """A fully specified discrete problem instance.

    f is the nodal source field (paired through the mass matrix), datum the
    prescribed right-edge temperature with its lifting, law the boundary
    heat-exchange potential.  domain_penalty / boundary_penalty must be
    present exactly as the mode requires.  lam is the penalty parameter
    (ignored in exact mode).

    Construction fails if the solvability condition
    relaxed_monotonicity * c0^2 * c3^2 < 1 is violated for the discrete
    embedding constants of the operators.
    """

    mesh: object
    ops: FeOperators
    f: np.ndarray
    datum: DirichletDatum
    law: BoundaryLaw
    mode: ConstraintMode
    domain_penalty: Optional[PenaltyLaw] = None
    boundary_penalty: Optional[PenaltyLaw] = None
    lam: float = 1.0

    def __post_init__(self):
        n = self.ops.n_nodes
        if np.shape(self.f) != (n,):
            raise ValueError("source field does not conform to the mesh")
        if np.shape(self.datum.lifting) != (n,):
            raise ValueError("Dirichlet datum does not conform to the mesh")
        if not isinstance(self.mode, ConstraintMode):
            raise ValueError(f"unknown constraint mode {self.mode!r}")
        if not self.lam > 0.0:
            raise ValueError(f"penalty parameter must be positive, got {self.lam}")

        needs_dom = self.mode in (ConstraintMode.PENALTY_DOMAIN, ConstraintMode.PENALTY_FULL)
        needs_bnd = self.mode in (ConstraintMode.PENALTY_BOUNDARY, ConstraintMode.PENALTY_FULL)
        if needs_dom:
            if self.domain_penalty is None:
                raise ValueError(f"mode {self.mode.value} requires a domain penalty law")
            if self.domain_penalty.kind is not PenaltyKind.DOMAIN_NONNEG:
                raise ValueError("domain penalty must be of the nonnegativity kind")
        elif self.domain_penalty is not None:
            raise ValueError(f"mode {self.mode.value} takes no domain penalty law")
        if needs_bnd:
            if self.boundary_penalty is None:
                raise ValueError(f"mode {self.mode.value} requires a boundary penalty law")
            if self.boundary_penalty.kind is not PenaltyKind.BOUNDARY_EQ:
                raise ValueError("boundary penalty must be of the equality kind")
        elif self.boundary_penalty is not None:
            raise ValueError(f"mode {self.mode.value} takes no boundary penalty law")

        c0, c3 = self.ops.constants()
        product = self.law.relaxed_monotonicity * c0 ** 2 * c3 ** 2
        if not product < 1.0:
            raise ValueError(
                "solvability condition violated: relaxed_monotonicity * c0^2 * c3^2 = "
                f"{product:.6g} >= 1 (c0={c0:.6g}, c3={c3:.6g})")


@dataclass
class SolveReport:
    """Outcome of one solve."""

    solution: np.ndarray
    outer_iters: int
    contraction_estimates: list
    final_increment: float
    inner_stats: dict
    residual: float


@dataclass
class _Structure:
    """Mode-dependent eliminated system, cached on the operators."""

    free: np.ndarray
    fixed: np.ndarray
    a_ff: sp.csr_matrix
    a_abs: sp.csr_matrix         # |a_ff|, for residual evaluation floors
    s_fd: sp.csr_matrix          # coupling of free to fixed dofs
    sm_ff_lu: object             # factor of (S+M) on free dofs, for dual norms
    has_lower: np.ndarray
    g3_pos: np.ndarray           # positions (within free) carrying flux-law weight
    g3_w: np.ndarray
    g3_xy: np.ndarray
    g2_pos: np.ndarray           # positions (within free) carrying right-edge weight
    g2_w: np.ndarray
    g2_xy: np.ndarray


def _structure(problem: HviProblem) -> _Structure:
    key = ("structure", problem.mode)
    cache = problem.ops._cache
    if key in cache:
        return cache[key]

    ops = problem.ops
    n = ops.n_nodes
    if problem.mode in _G2_FIXED_MODES:
        fixed = np.union1d(ops.gamma1_nodes, ops.gamma2_nodes)
    else:
        fixed = ops.gamma1_nodes
    free = np.setdiff1d(np.arange(n), fixed)

    a_ff = ops.stiffness[np.ix_(free, free)].tocsr()
    s_fd = ops.stiffness[np.ix_(free, fixed)].tocsr()
    sm = ops.stiffness + ops.mass
    sm_ff_lu = spla.splu(sp.csc_matrix(sm[np.ix_(free, free)]))

    has_lower = np.full(free.size, problem.mode in _BOUND_MODES)

    w3 = ops.gamma3_weights[free]
    g3_pos = np.nonzero(w3 > 0.0)[0]
    w2 = ops.gamma2_weights[free]
    g2_pos = np.nonzero(w2 > 0.0)[0]

    struct = _Structure(
        free=free, fixed=fixed, a_ff=a_ff, a_abs=abs(a_ff), s_fd=s_fd,
        sm_ff_lu=sm_ff_lu, has_lower=has_lower,
        g3_pos=g3_pos, g3_w=w3[g3_pos], g3_xy=ops.mesh.nodes[free[g3_pos]],
        g2_pos=g2_pos, g2_w=w2[g2_pos], g2_xy=ops.mesh.nodes[free[g2_pos]],
    )
    cache[key] = struct
    return struct


def _fixed_values(problem: HviProblem, struct: _Structure) -> np.ndarray:
    vals = np.zeros(problem.ops.n_nodes)
    if problem.mode in _G2_FIXED_MODES:
        g2 = problem.ops.gamma2_nodes
        vals[g2] = problem.datum.boundary_values[g2]
    return vals[struct.fixed]


def _penalty_terms(problem: HviProblem, struct: _Structure):
    """Nodal penalty data on free dofs: list of (q, slope_below, slope_above, shift)."""
    terms = []
    if problem.mode in (ConstraintMode.PENALTY_DOMAIN, ConstraintMode.PENALTY_FULL):
        q = problem.ops.lumped_mass[struct.free] / problem.lam
        p = problem.domain_penalty
        terms.append((q, p.slope_below, p.slope_above, np.zeros(struct.free.size)))
    if problem.mode in (ConstraintMode.PENALTY_BOUNDARY, ConstraintMode.PENALTY_FULL):
        q = np.zeros(struct.free.size)
        q[struct.g2_pos] = struct.g2_w / problem.lam
        p = problem.boundary_penalty
        shift = problem.datum.boundary_values[struct.free]
        terms.append((q, p.slope_below, p.slope_above, shift))
    return terms


def _newton_inner(a_ff, a_abs, terms, rhs, u, tol, max_iter=100):
    """Semismooth Newton for A u + sum_t q*p_t(u - shift_t) = rhs (no bounds).

    The shipped penalties are piecewise linear and monotone, so the
    iteration terminates finitely once the branch pattern settles.  The
    residual is compared against tol after subtracting the floating-point
    evaluation floor of each nodal sum (large penalty stiffness makes the
    exact residual unobservable below that floor).
    """
    n = rhs.shape[0]
    for it in range(1, max_iter + 1):
        resid = a_ff @ u - rhs
        floor = _kernels.ROUND_EPS * (a_abs @ np.abs(u) + np.abs(rhs))
        dpen = np.zeros(n)
        for q, sb, sa, shift in terms:
            t = u - shift
            slope = np.where(t < 0.0, sb, sa)
            pen = q * slope * t
            resid += pen
            floor += _kernels.ROUND_EPS * np.abs(pen) \
                + _kernels.ARG_EPS * q * slope * (np.abs(u) + np.abs(shift))
            dpen += q * slope
        if np.max(np.abs(resid) - floor) <= tol:
            return u, it - 1
        jac = (a_ff + sp.diags(dpen)).tocsc()
        u = u + spla.spsolve(jac, -resid)
    raise ConvergenceError(f"inner semismooth Newton did not converge in {max_iter} steps")


def solve(problem: HviProblem, tol: float = 1e-10, max_outer: int = 200,
          start: Optional[np.ndarray] = None, relax: float = 1.3,
          inner_tol: float = 1e-12, max_sweeps: int = 2_000_000) -> SolveReport:
    """Solve the discrete inequality by the frozen-subgradient fixed point.

    Stops when the increment between outer iterates drops below tol in the
    full H1 norm; the per-step contraction ratios are returned in the
    report.  Inner problems are solved to a nodal residual of
    inner_tol * (1 + |rhs|).  After convergence the first-order optimality
    residual of the inner problem at the final subgradient is measured in
    the dual norm of the working space and must not exceed 10*tol.

    Raises ConvergenceError (with the ratio history) when max_outer is
    exceeded, and propagates inner-solver failures with context.
    """
    ops = problem.ops
    struct = _structure(problem)
    fixed_vals = _fixed_values(problem, struct)
    terms = _penalty_terms(problem, struct)

    if start is None:
        u_full = np.maximum(problem.datum.lifting, 0.0)
    else:
        u_full = np.asarray(start, dtype=float).copy()
        if u_full.shape != (ops.n_nodes,):
            raise ValueError("start field does not conform to the mesh")
    u_full[struct.fixed] = fixed_vals
    u = u_full[struct.free].copy()
    if problem.mode in _BOUND_MODES:
        np.maximum(u, 0.0, out=u)

    rhs_base = (ops.mass @ problem.f)[struct.free] - struct.s_fd @ fixed_vals

    use_psor = problem.mode in _BOUND_MODES
    if use_psor:
        if terms:
            q_arr, sb, sa, shift = terms[0]
        else:
            q_arr = np.zeros(struct.free.size)
            sb = sa = 0.0
            shift = np.zeros(struct.free.size)
        relax_eff = relax if sb == sa else 1.0  # kinked diagonal: no over-relaxation
        lower = np.zeros(struct.free.size)

    qs: list[float] = []
    sweeps_total = 0
    newton_total = 0
    prev_inc = None
    inc = np.inf
    diff = np.zeros(ops.n_nodes)

    for k in range(1, max_outer + 1):
        xi = np.asarray(problem.law.subgrad(struct.g3_xy, u[struct.g3_pos]), dtype=float)
        rhs = rhs_base.copy()
        rhs[struct.g3_pos] -= struct.g3_w * xi
        res_tol = inner_tol * (1.0 + float(np.max(np.abs(rhs), initial=0.0)))

        u_new = u.copy()
        if use_psor:
            sweeps, defect = _kernels.psor_sweeps(
                struct.a_ff.indptr, struct.a_ff.indices, struct.a_ff.data,
                q_arr, sb, sa, shift, rhs, lower, struct.has_lower,
                u_new, relax_eff, res_tol, max_sweeps)
            sweeps_total += int(sweeps)
            if defect > res_tol:
                raise ConvergenceError(
                    f"inner projected SOR stalled at outer iteration {k} "
                    f"(residual {defect:.3e})", qs)
        else:
            try:
                u_new, iters = _newton_inner(struct.a_ff, struct.a_abs, terms,
                                             rhs, u_new, tol=res_tol)
            except ConvergenceError as exc:
                raise ConvergenceError(f"{exc} (outer iteration {k})", qs) from exc
            newton_total += iters

        diff[:] = 0.0
        diff[struct.free] = u_new - u
        inc = v_norm(ops, diff)
        if prev_inc is not None and prev_inc > 0.0:
            qs.append(inc / prev_inc)
        u = u_new
        if inc <= tol:
            break
        prev_inc = inc
    else:
        raise ConvergenceError(
            f"outer iteration did not reach tol={tol:.3e} within {max_outer} steps "
            f"(last increment {inc:.3e})", qs)

    u_full[struct.free] = u
    residual = _optimality_residual(problem, struct, terms, rhs_base, u_full)
    if residual > 10.0 * tol:
        raise ConvergenceError(
            f"a posteriori optimality residual {residual:.3e} exceeds 10*tol", qs)

    return SolveReport(solution=u_full, outer_iters=k,
                       contraction_estimates=qs, final_increment=float(inc),
                       inner_stats={"psor_sweeps": sweeps_total,
                                    "newton_iters": newton_total},
                       residual=residual)


def _optimality_residual(problem, struct, terms, rhs_base, u_full):
    """Dual-norm first-order residual of the inner problem at the fixed point.

    Each nodal residual is reduced by its floating-point evaluation floor
    (ROUND_EPS times the magnitude of the summed terms); with stiff penalty
    scalings the exact residual is not observable below that floor.
    """
    u = u_full[struct.free]
    g = struct.a_ff @ u - rhs_base
    floor = _kernels.ROUND_EPS * (struct.a_abs @ np.abs(u) + np.abs(rhs_base))
    xi = np.asarray(problem.law.subgrad(struct.g3_xy, u[struct.g3_pos]), dtype=float)
    g[struct.g3_pos] += struct.g3_w * xi
    floor[struct.g3_pos] += _kernels.ROUND_EPS * struct.g3_w * np.abs(xi)
    for q, sb, sa, shift in terms:
        t = u - shift
        slope = np.where(t < 0.0, sb, sa)
        pen = q * slope * t
        g += pen
        floor += _kernels.ROUND_EPS * np.abs(pen) \
            + _kernels.ARG_EPS * q * slope * (np.abs(u) + np.abs(shift))
    if problem.mode in _BOUND_MODES:
        active = u <= 1e-12
        g[active] = np.minimum(g[active], 0.0)
    g = np.sign(g) * np.maximum(np.abs(g) - floor, 0.0)
    z = struct.sm_ff_lu.solve(g)
    return float(np.sqrt(max(g @ z, 0.0)))


def penalty_pairing(problem: HviProblem, u: np.ndarray, v: np.ndarray) -> float:
    """Value of the penalty operator at u paired with the field v.

    Domain part: lumped-mass sum of the nonnegativity penalty of u against
    v.  Boundary part: lumped right-edge sum of the equality penalty of
    (u - b) against v.  Raises in exact mode, which has no penalty
    operator.
    """
    if problem.mode is ConstraintMode.EXACT:
        raise ValueError("the exact mode has no penalty operator")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    ops = problem.ops
    xy = ops.mesh.nodes
    total = 0.0
    if problem.mode in (ConstraintMode.PENALTY_DOMAIN, ConstraintMode.PENALTY_FULL):
        total += float(np.sum(ops.lumped_mass
                              * problem.domain_penalty.value(xy, u) * v))
    if problem.mode in (ConstraintMode.PENALTY_BOUNDARY, ConstraintMode.PENALTY_FULL):
        total += float(np.sum(ops.gamma2_weights
                              * problem.boundary_penalty.value(xy, u - problem.datum.boundary_values)
                              * v))
    return total


def feasible(problem: HviProblem, u: np.ndarray, tol: float = 1e-12) -> bool:
    """Membership of u in the exact discrete constraint set.

    Checks nodal nonnegativity, the prescribed right-edge values and the
    homogeneous left-edge values, all up to tol.
    """
    u = np.asarray(u, dtype=float)
    ops = problem.ops
    if np.min(u, initial=0.0) < -tol:
        return False
    if np.max(np.abs(u[ops.gamma1_nodes]), initial=0.0) > tol:
        return False
    g2 = ops.gamma2_nodes
    return bool(np.max(np.abs(u[g2] - problem.datum.boundary_values[g2]), initial=0.0) <= tol)


def relaxed_feasible(problem: HviProblem, u: np.ndarray, tol: float = 1e-12) -> bool:
    """Membership of u in the relaxed set of the problem's mode."""
    u = np.asarray(u, dtype=float)
    ops = problem.ops
    if np.max(np.abs(u[ops.gamma1_nodes]), initial=0.0) > tol:
        return False
    if problem.mode in _G2_FIXED_MODES:
        g2 = ops.gamma2_nodes
        if np.max(np.abs(u[g2] - problem.datum.boundary_values[g2]), initial=0.0) > tol:
            return False
    if problem.mode in _BOUND_MODES or problem.mode is ConstraintMode.EXACT:
        if np.min(u, initial=0.0) < -tol:
            return False
    return True


def _random_in_relaxed_set(problem, rng):
    ops = problem.ops
    u = rng.uniform(-2.0, 2.0, size=ops.n_nodes)
    u[ops.gamma1_nodes] = 0.0
    if problem.mode in _G2_FIXED_MODES:
        g2 = ops.gamma2_nodes
        u[g2] = problem.datum.boundary_values[g2]
    if problem.mode in _BOUND_MODES:
        np.maximum(u, 0.0, out=u)
    return u


def _random_in_exact_set(problem, rng):
    ops = problem.ops
    v = np.maximum(rng.uniform(-2.0, 2.0, size=ops.n_nodes), 0.0)
    v[ops.gamma1_nodes] = 0.0
    g2 = ops.gamma2_nodes
    v[g2] = problem.datum.boundary_values[g2]
    return v


def _project_exact(problem, u):
    v = np.maximum(u, 0.0)
    v[problem.ops.gamma1_nodes] = 0.0
    g2 = problem.ops.gamma2_nodes
    v[g2] = problem.datum.boundary_values[g2]
    return v


def check_penalty_axioms(problem: HviProblem, trials: int = 1000, seed: int = 0) -> dict:
    """Randomized verification of the structural penalty-operator axioms.

    Per trial: the pairing of the operator at a random relaxed-feasible u
    against v - u (v exact-feasible) must be nonpositive; the operator must
    be monotone; and whenever the pairing vanishes over a spanning family
    of directions, u must lie in the exact constraint set (checked on a
    constructed witness drawn from the exact set, whose pairings vanish).

    Returns a report dict with violation counts and the first
    counterexample fields, if any.
    """
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 17], dtype=np.uint64)))
    ops = problem.ops
    report = {
        "trials": trials,
        "sign_violations": 0,
        "monotone_violations": 0,
        "witness_violations": 0,
        "max_pairing": -np.inf,
        "min_monotone": np.inf,
        "counterexample": None,
    }
    scale = float(np.max(np.abs(problem.datum.boundary_values), initial=0.0)) + 2.0
    pair_tol = 1e-10

    free = np.setdiff1d(np.arange(ops.n_nodes),
                        np.union1d(ops.gamma1_nodes, ops.gamma2_nodes))
    for _ in range(trials):
        u = _random_in_relaxed_set(problem, rng)
        v = _random_in_exact_set(problem, rng)
        w = _random_in_relaxed_set(problem, rng)

        pair = penalty_pairing(problem, u, v - u)
        report["max_pairing"] = max(report["max_pairing"], pair)
        if pair > pair_tol:
            report["sign_violations"] += 1
            report["counterexample"] = report["counterexample"] or {"u": u, "v": v, "pairing": pair}

        mono = penalty_pairing(problem, u, u - w) - penalty_pairing(problem, w, u - w)
        report["min_monotone"] = min(report["min_monotone"], mono)
        if mono < -pair_tol:
            report["monotone_violations"] += 1
            report["counterexample"] = report["counterexample"] or {"u": u, "w": w, "monotone": mono}

        # witness for the detection axiom: an exact-feasible point must give
        # vanishing pairings along a spanning family, and conversely a
        # vanishing family certifies exact feasibility
        uk = _random_in_exact_set(problem, rng)
        base = _project_exact(problem, uk)
        gaps = [abs(penalty_pairing(problem, uk, base - uk))]
        for i in free[:: max(1, free.size // 8)]:
            probe = base.copy()
            probe[i] += 1.0
            gaps.append(abs(penalty_pairing(problem, uk, probe - uk)))
        if max(gaps) <= pair_tol * scale:
            if not feasible(problem, uk, tol=1e-10):
                report["witness_violations"] += 1
                report["counterexample"] = report["counterexample"] or {"u": uk, "gaps": gaps}

    report["violations"] = (report["sign_violations"] + report["monotone_violations"]
                            + report["witness_violations"])
    return report


def brute_force_oracle(problem: HviProblem, max_constrained: int = 14) -> np.ndarray:
    """Obstacle solution by exhaustive active-set enumeration.

    Only for the exact mode with a convex boundary law whose subgradient is
    affine (q0 + k*r), so the problem is a quadratic program with bound
    constraints.  All 2^m active sets over the m constrained free nodes are
    enumerated; the candidate satisfying primal feasibility (values >=
    -1e-12) and dual feasibility (multipliers >= -1e-12) is returned.

    Independent of the fixed-point path: uses dense linear algebra on the
    eliminated system.
    """
    if problem.mode is not ConstraintMode.EXACT:
        raise ValueError("the enumeration oracle handles the exact mode only")
    if problem.law.affine is None:
        raise ValueError("the enumeration oracle needs an affine subgradient law")
    struct = _structure(problem)
    m = struct.free.size
    if m > max_constrained:
        raise ValueError(f"too many constrained nodes for enumeration: {m} > {max_constrained}")

    q0, kslope = problem.law.affine
    fixed_vals = _fixed_values(problem, struct)
    w3 = np.zeros(m)
    w3[struct.g3_pos] = struct.g3_w
    amat = struct.a_ff.toarray() + np.diag(kslope * w3)
    rhs = (problem.ops.mass @ problem.f)[struct.free] - struct.s_fd @ fixed_vals - q0 * w3

    candidates = []
    for mask in range(2 ** m):
        active = np.array([(mask >> i) & 1 for i in range(m)], dtype=bool)
        inact = ~active
        u = np.zeros(m)
        if inact.any():
            try:
                u[inact] = np.linalg.solve(amat[np.ix_(inact, inact)], rhs[inact])
            except np.linalg.LinAlgError:
                continue
        if np.min(u, initial=0.0) < -1e-12:
            continue
        mult = amat @ u - rhs
        if active.any() and np.min(mult[active]) < -1e-12:
            continue
        candidates.append(u)

    if not candidates:
        raise OracleInconsistencyError("no active set passed primal and dual feasibility")
    first = candidates[0]
    for other in candidates[1:]:
        if np.max(np.abs(other - first)) > 1e-9:
            raise OracleInconsistencyError("multiple inconsistent active sets passed")

    out = np.zeros(problem.ops.n_nodes)
    out[struct.fixed] = fixed_vals
    out[struct.free] = first
    return out


def solution_csv(report: SolveReport, path) -> None:
    """Serialize a solution as 'node,value' CSV."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "value"])
        for i, v in enumerate(report.solution):
            w.writerow([i, f"{v:.17g}"])
