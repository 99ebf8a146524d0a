"""Experiment configuration: flat INI files with expressions for fields.

A configuration fully determines one experiment: mesh, constitutive laws,
penalty mode and schedule, source, cost and tolerances, plus the seed that
feeds every random draw.  Scalar fields may be given as expressions in the
coordinates (x1, x2 in the domain, x2 on the right edge), evaluated with a
whitelisted numpy namespace.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem, geometry, laws
from .solver import ConstraintMode, HviProblem

KINDS = ("solve", "penalty_curve", "approx_sequence", "control",
         "mu_convergence", "oracle_check", "g_axioms")

_EXPR_NAMES = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "sqrt": np.sqrt, "abs": np.abs, "pi": np.pi,
    "minimum": np.minimum, "maximum": np.maximum,
}


def field_expression(expr: str, variables=("x1", "x2")):
    """Compile an arithmetic expression into a vectorized callable.

    Only the listed variables and a small numpy namespace are visible;
    any other name is rejected at compile time.
    """
    code = compile(expr, "<config>", "eval")
    for name in code.co_names:
        if name not in _EXPR_NAMES and name not in variables:
            raise ValueError(f"unknown name {name!r} in expression {expr!r}")

    def evaluate(*args):
        local = dict(zip(variables, args))
        out = eval(code, {"__builtins__": {}}, {**_EXPR_NAMES, **local})
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(args[0])).copy()

    return evaluate


@dataclass
class ExperimentConfig:
    """Parsed, not yet validated, experiment description."""

    kind: str
    seed: int
    out: str
    alpha: float
    beta: float
    nx: int
    ny: int
    phi_expr: str
    f_expr: str
    law_kind: str
    law_params: dict
    mode: str
    domain_coeff: float
    boundary_coeff: float
    lam: float
    lambdas: list
    rule: str
    amplitude: float
    count: int
    a0: float
    a2: float
    target_expr: str
    omega_slope: float
    mu: float
    mus: list
    basis_size: int
    starts: int
    theta_scale: float
    outer_tol: float
    max_outer: int
    oracle_trials: int
    axiom_trials: int
    path: str = ""


def _floats(text: str) -> list:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def load_config(path) -> ExperimentConfig:
    """Parse the INI file; missing keys fall back to documented defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = parser.read(path)
    if not read:
        raise ValueError(f"cannot read configuration file {path}")

    def get(section, key, fallback):
        return parser.get(section, key, fallback=fallback) if parser.has_section(section) \
            else fallback

    law_kind = get("law", "kind", "zero").strip()
    law_params = {}
    for key in ("q0", "k", "a", "r0", "slope_drop"):
        raw = get("law", key, None)
        if raw is not None:
            law_params[key] = float(raw)

    return ExperimentConfig(
        kind=get("experiment", "kind", "solve").strip(),
        seed=int(get("experiment", "seed", "0")),
        out=get("experiment", "out", "results").strip(),
        alpha=float(get("mesh", "alpha", "1.0")),
        beta=float(get("mesh", "beta", "1.0")),
        nx=int(get("mesh", "nx", "8")),
        ny=int(get("mesh", "ny", "8")),
        phi_expr=get("dirichlet", "phi", "0.0").strip(),
        f_expr=get("source", "f", "0.0").strip(),
        law_kind=law_kind,
        law_params=law_params,
        mode=get("penalty", "mode", "exact").strip(),
        domain_coeff=float(get("penalty", "domain_coeff", "1.0")),
        boundary_coeff=float(get("penalty", "boundary_coeff", "1.0")),
        lam=float(get("penalty", "lam", "1.0")),
        lambdas=_floats(get("penalty", "lambdas", "")),
        rule=get("sequence", "rule", "constant").strip(),
        amplitude=float(get("sequence", "amplitude", "1.0")),
        count=int(get("sequence", "count", "6")),
        a0=float(get("cost", "a0", "1.0")),
        a2=float(get("cost", "a2", "1.0")),
        target_expr=get("cost", "target", "0.0").strip(),
        omega_slope=float(get("cost", "omega_slope", "1.0")),
        mu=float(get("cost", "mu", "0.0")),
        mus=_floats(get("cost", "mus", "")),
        basis_size=int(get("control", "basis_size", "3")),
        starts=int(get("control", "starts", "8")),
        theta_scale=float(get("control", "theta_scale", "1.0")),
        outer_tol=float(get("tolerances", "outer_tol", "1e-10")),
        max_outer=int(get("tolerances", "max_outer", "200")),
        oracle_trials=int(get("oracle", "trials", "20")),
        axiom_trials=int(get("axioms", "trials", "1000")),
        path=str(path),
    )


def make_law(cfg: ExperimentConfig):
    p = cfg.law_params
    if cfg.law_kind == "zero":
        return laws.law_zero()
    if cfg.law_kind == "linear":
        return laws.law_linear(p.get("q0", 0.0), p.get("k", 0.0))
    if cfg.law_kind == "nonmonotone":
        return laws.law_nonmonotone(p.get("a", 1.0), p.get("r0", 0.5),
                                    p.get("slope_drop", 0.5))
    raise ValueError(f"unknown law kind {cfg.law_kind!r}")


def make_problem(cfg: ExperimentConfig) -> HviProblem:
    """Build the discrete problem described by the configuration."""
    mesh = geometry.build_rect_mesh(cfg.alpha, cfg.beta, cfg.nx, cfg.ny)
    ops = fem.assemble(mesh)
    phi = field_expression(cfg.phi_expr, variables=("x2",))
    datum = laws.dirichlet_ramp(phi, mesh)
    f = fem.nodal_field(mesh, field_expression(cfg.f_expr))
    law = make_law(cfg)
    mode = ConstraintMode(cfg.mode)

    domain_penalty = None
    boundary_penalty = None
    if mode in (ConstraintMode.PENALTY_DOMAIN, ConstraintMode.PENALTY_FULL):
        domain_penalty = laws.negative_part_penalty(cfg.domain_coeff)
    if mode in (ConstraintMode.PENALTY_BOUNDARY, ConstraintMode.PENALTY_FULL):
        boundary_penalty = laws.linear_penalty(cfg.boundary_coeff)

    return HviProblem(mesh=mesh, ops=ops, f=f, datum=datum, law=law, mode=mode,
                      domain_penalty=domain_penalty, boundary_penalty=boundary_penalty,
                      lam=cfg.lam)


def validate(cfg: ExperimentConfig) -> list[str]:
    """Full consistency check without running any solves.

    Returns a list of diagnostics; an empty list means the configuration
    is runnable.  Includes the solvability check with the discrete
    embedding constants of the configured mesh.
    """
    diags = []
    if cfg.kind not in KINDS:
        diags.append(f"experiment.kind: unknown kind {cfg.kind!r}, expected one of {KINDS}")
    if cfg.alpha <= 0 or cfg.beta <= 0:
        diags.append(f"mesh: domain sides must be positive (alpha={cfg.alpha}, beta={cfg.beta})")
    if cfg.nx < 1 or cfg.ny < 1:
        diags.append(f"mesh: subdivision counts must be >= 1 (nx={cfg.nx}, ny={cfg.ny})")

    try:
        mode = ConstraintMode(cfg.mode)
    except ValueError:
        diags.append(f"penalty.mode: unknown mode {cfg.mode!r}")
        mode = None

    if mode in (ConstraintMode.PENALTY_DOMAIN, ConstraintMode.PENALTY_FULL) \
            and cfg.domain_coeff <= 0:
        diags.append("penalty.domain_coeff: missing penalty law "
                     f"(need a positive coefficient, got {cfg.domain_coeff})")
    if mode in (ConstraintMode.PENALTY_BOUNDARY, ConstraintMode.PENALTY_FULL) \
            and cfg.boundary_coeff <= 0:
        diags.append("penalty.boundary_coeff: missing penalty law "
                     f"(need a positive coefficient, got {cfg.boundary_coeff})")
    if mode is not None and mode is not ConstraintMode.EXACT:
        if cfg.kind in ("solve", "g_axioms") and cfg.lam <= 0:
            diags.append(f"penalty.lam: must be positive, got {cfg.lam}")
        if cfg.kind in ("penalty_curve", "approx_sequence") and not cfg.lambdas:
            diags.append("penalty.lambdas: a schedule is required for this experiment")
    if cfg.kind == "oracle_check" and cfg.mode != "exact":
        diags.append("oracle_check: requires penalty.mode = exact")
    if cfg.kind == "g_axioms" and cfg.mode == "exact":
        diags.append("g_axioms: requires a penalty mode")
    if cfg.kind == "mu_convergence" and (not cfg.mus or not cfg.lambdas):
        diags.append("mu_convergence: needs both cost.mus and penalty.lambdas schedules")
    if cfg.a0 <= 0 or cfg.a2 <= 0:
        diags.append(f"cost: weights must be positive (a0={cfg.a0}, a2={cfg.a2})")
    if not 1 <= cfg.basis_size <= 12:
        diags.append(f"control.basis_size: must be between 1 and 12, got {cfg.basis_size}")
    if cfg.outer_tol <= 0:
        diags.append(f"tolerances.outer_tol: must be positive, got {cfg.outer_tol}")

    for key, expr, variables in (("dirichlet.phi", cfg.phi_expr, ("x2",)),
                                 ("source.f", cfg.f_expr, ("x1", "x2")),
                                 ("cost.target", cfg.target_expr, ("x2",))):
        try:
            field_expression(expr, variables)
        except (ValueError, SyntaxError) as exc:
            diags.append(f"{key}: {exc}")

    try:
        law = make_law(cfg)
    except ValueError as exc:
        diags.append(f"law: {exc}")
        law = None

    if not diags and law is not None:
        mesh = geometry.build_rect_mesh(cfg.alpha, cfg.beta, cfg.nx, cfg.ny)
        ops = fem.assemble(mesh)
        c0, c3 = ops.constants()
        product = law.relaxed_monotonicity * c0 ** 2 * c3 ** 2
        if not product < 1.0:
            diags.append(
                "law: solvability condition violated, "
                f"relaxed_monotonicity * c0^2 * c3^2 = {product:.6g} >= 1 "
                f"(c0={c0:.6g}, c3={c3:.6g})")
    return diags


def resolved_defaults(cfg: ExperimentConfig) -> list[str]:
    """Echo of the fully resolved configuration as key=value lines."""
    lines = []
    for name in ("kind", "seed", "out", "alpha", "beta", "nx", "ny", "phi_expr",
                 "f_expr", "law_kind", "mode", "domain_coeff", "boundary_coeff",
                 "lam", "rule", "amplitude", "count", "a0", "a2", "target_expr",
                 "omega_slope", "mu", "basis_size", "starts", "theta_scale",
                 "outer_tol", "max_outer", "oracle_trials", "axiom_trials"):
        lines.append(f"{name}={getattr(cfg, name)}")
    if cfg.law_params:
        lines.append("law_params=" + ",".join(f"{k}:{v:g}" for k, v in sorted(cfg.law_params.items())))
    if cfg.lambdas:
        lines.append("lambdas=" + ",".join(f"{v:g}" for v in cfg.lambdas))
    if cfg.mus:
        lines.append("mus=" + ",".join(f"{v:g}" for v in cfg.mus))
    return lines
