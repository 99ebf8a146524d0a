"""heatvi: constrained heat-transfer experiments with nonsmooth boundary laws.

Submodules: geometry (meshes), fem (P1 operators and embedding constants),
laws (boundary potentials, penalties, Dirichlet data), solver (fixed-point
solver and oracles), tykhonov (approximating-sequence experiments), control
(optimal heating control), config/cli (experiment harness).
"""

from .geometry import BoundaryTag, TriMesh, boundary_nodes, build_rect_mesh
from .fem import FeOperators, assemble, discrete_constants, nodal_field, v_norm
from .laws import (BoundaryLaw, DirichletDatum, PenaltyKind, PenaltyLaw,
                   dirichlet_ramp, dirichlet_zero, law_linear, law_nonmonotone,
                   law_zero, linear_penalty, negative_part_penalty)
from .solver import (ConstraintMode, ConvergenceError, HviProblem, SolveReport,
                     brute_force_oracle, check_penalty_axioms, penalty_pairing,
                     solve)

__all__ = [
    "BoundaryTag", "TriMesh", "boundary_nodes", "build_rect_mesh",
    "FeOperators", "assemble", "discrete_constants", "nodal_field", "v_norm",
    "BoundaryLaw", "DirichletDatum", "PenaltyKind", "PenaltyLaw",
    "dirichlet_ramp", "dirichlet_zero", "law_linear", "law_nonmonotone",
    "law_zero", "linear_penalty", "negative_part_penalty",
    "ConstraintMode", "ConvergenceError", "HviProblem", "SolveReport",
    "brute_force_oracle", "check_penalty_axioms", "penalty_pairing", "solve",
]

__version__ = "0.1.0"
