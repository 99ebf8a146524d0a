"""Constitutive data for the heat-transfer problem.

Three kinds of objects live here: boundary heat-exchange potentials with
their generalized (Clarke) calculus, monotone piecewise-linear penalty
functions used by the penalized formulations, and the prescribed boundary
temperature together with its nonnegative lifting into the domain.

All shipped potentials are piecewise C1 in the temperature, so one-sided
derivatives are available in closed form and the generalized directional
derivative is evaluated symbolically, never by numerical limits.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .fem import nodal_field
from .geometry import BoundaryTag, TriMesh, boundary_nodes


@dataclass(frozen=True)
class BoundaryLaw:
    """A locally Lipschitz heat-exchange potential on the flux boundary.

    ``value(x, r)`` is the potential, ``deriv_left`` / ``deriv_right`` its
    one-sided derivatives in r (x is the boundary point, accepted for
    spatially varying laws; the shipped laws ignore it).  ``growth_const``
    and ``growth_slope`` bound every subgradient by c0 + c1*|r|;
    ``relaxed_monotonicity`` is the constant controlling how nonmonotone
    the law may be, and enters the solvability condition of the solver.
    ``affine`` is (q0, k) when the subgradient is exactly q0 + k*r, which
    enables the enumeration oracle; None otherwise.
    """

    value: Callable
    deriv_left: Callable
    deriv_right: Callable
    growth_const: float
    growth_slope: float
    relaxed_monotonicity: float
    affine: Optional[tuple[float, float]] = None

    def subgrad(self, x, r):
        """A deterministic subgradient selection (midpoint at kinks)."""
        return 0.5 * (np.asarray(self.deriv_left(x, r)) + np.asarray(self.deriv_right(x, r)))

    def dir_deriv(self, x, r, s):
        """Generalized directional derivative at r in direction s.

        For a piecewise-C1 potential this is the larger of the two
        one-sided slopes times s; it is positively homogeneous in s and
        dominates every subgradient pairing.
        """
        s = np.asarray(s, dtype=float)
        dl = np.asarray(self.deriv_left(x, r), dtype=float)
        dr = np.asarray(self.deriv_right(x, r), dtype=float)
        return np.maximum(dl * s, dr * s)


def law_zero() -> BoundaryLaw:
    """The trivial potential: zero flux on the heat-exchange boundary."""
    zero = lambda x, r: np.zeros_like(np.asarray(r, dtype=float))
    return BoundaryLaw(value=zero, deriv_left=zero, deriv_right=zero,
                       growth_const=0.0, growth_slope=0.0,
                       relaxed_monotonicity=0.0, affine=(0.0, 0.0))


def law_linear(q0: float, k: float = 0.0) -> BoundaryLaw:
    """Smooth convex potential q0*r + k*r^2/2.

    With k = 0 this prescribes the constant outgoing flux q0; k > 0 adds a
    linear (Robin-type) exchange term.  Convexity makes the relaxed
    monotonicity constant zero.
    """
    if k < 0.0:
        raise ValueError(f"exchange coefficient must be nonnegative, got k={k}")
    q0 = float(q0)
    k = float(k)

    def value(x, r):
        r = np.asarray(r, dtype=float)
        return q0 * r + 0.5 * k * r * r

    def deriv(x, r):
        return q0 + k * np.asarray(r, dtype=float)

    return BoundaryLaw(value=value, deriv_left=deriv, deriv_right=deriv,
                       growth_const=abs(q0), growth_slope=k,
                       relaxed_monotonicity=0.0, affine=(q0, k))


def law_nonmonotone(a: float, r0: float, slope_drop: float) -> BoundaryLaw:
    """Piecewise-quadratic potential with a nonmonotone exchange law.

    The derivative is the continuous piecewise-linear function

        beta(r) = a*r                      for r <= r0,
        beta(r) = a*r0 - slope_drop*(r-r0) for r0 < r <= r1,
        beta(r) = 0                        for r > r1,

    with r1 = r0 + a*r0/slope_drop the point where the decreasing branch
    reaches zero.  The single decreasing branch has rate slope_drop, which
    is therefore the relaxed monotonicity constant; the plateau keeps the
    subgradient growth bounded by a*r0 + a*|r|.
    """
    if a <= 0.0 or r0 <= 0.0 or slope_drop <= 0.0:
        raise ValueError("law_nonmonotone needs a > 0, r0 > 0, slope_drop > 0, "
                         f"got a={a}, r0={r0}, slope_drop={slope_drop}")
    a = float(a)
    r0 = float(r0)
    slope_drop = float(slope_drop)
    r1 = r0 + a * r0 / slope_drop
    v0 = 0.5 * a * r0 * r0  # potential at r0
    v1 = v0 + a * r0 * (r1 - r0) - 0.5 * slope_drop * (r1 - r0) ** 2

    def beta(x, r):
        r = np.asarray(r, dtype=float)
        mid = a * r0 - slope_drop * (r - r0)
        return np.where(r <= r0, a * r, np.where(r <= r1, mid, 0.0))

    def value(x, r):
        r = np.asarray(r, dtype=float)
        low = 0.5 * a * r * r
        mid = v0 + a * r0 * (r - r0) - 0.5 * slope_drop * (r - r0) ** 2
        return np.where(r <= r0, low, np.where(r <= r1, mid, v1))

    return BoundaryLaw(value=value, deriv_left=beta, deriv_right=beta,
                       growth_const=a * r0, growth_slope=a,
                       relaxed_monotonicity=slope_drop)


class PenaltyKind(Enum):
    """What a vanishing penalty certifies about its argument."""

    DOMAIN_NONNEG = "domain_nonneg"   # value(r) = 0 iff r >= 0
    BOUNDARY_EQ = "boundary_eq"       # value(r) = 0 iff r = 0


@dataclass(frozen=True)
class PenaltyLaw:
    """Monotone piecewise-linear penalty with its single kink at zero.

    value(r) = slope_below * min(r, 0) + slope_above * max(r, 0).
    Both slopes are nonnegative (monotonicity); the Lipschitz constant is
    their maximum.
    """

    slope_below: float
    slope_above: float
    kind: PenaltyKind

    def __post_init__(self):
        if self.slope_below < 0.0 or self.slope_above < 0.0:
            raise ValueError("penalty slopes must be nonnegative")
        if self.kind is PenaltyKind.DOMAIN_NONNEG:
            if not (self.slope_below > 0.0 and self.slope_above == 0.0):
                raise ValueError("a domain-nonnegativity penalty must vanish exactly on r >= 0")
        if self.kind is PenaltyKind.BOUNDARY_EQ:
            if not (self.slope_below > 0.0 and self.slope_above > 0.0):
                raise ValueError("an equality penalty must vanish only at r = 0")

    @property
    def lipschitz(self) -> float:
        return max(self.slope_below, self.slope_above)

    def value(self, x, r):
        r = np.asarray(r, dtype=float)
        return self.slope_below * np.minimum(r, 0.0) + self.slope_above * np.maximum(r, 0.0)

    def deriv(self, x, r):
        """A.e. derivative selection (right branch at the kink)."""
        r = np.asarray(r, dtype=float)
        return np.where(r < 0.0, self.slope_below, self.slope_above)

    def zero_set(self, r):
        """Predicate: True where value(r) = 0 by construction."""
        r = np.asarray(r, dtype=float)
        if self.kind is PenaltyKind.DOMAIN_NONNEG:
            return r >= 0.0
        return r == 0.0


def negative_part_penalty(c: float) -> PenaltyLaw:
    """Penalty -c * max(-r, 0): vanishes exactly where r >= 0."""
    if c <= 0.0:
        raise ValueError(f"penalty coefficient must be positive, got {c}")
    return PenaltyLaw(slope_below=float(c), slope_above=0.0,
                      kind=PenaltyKind.DOMAIN_NONNEG)


def linear_penalty(c: float) -> PenaltyLaw:
    """Penalty c * r: vanishes only at r = 0."""
    if c <= 0.0:
        raise ValueError(f"penalty coefficient must be positive, got {c}")
    return PenaltyLaw(slope_below=float(c), slope_above=float(c),
                      kind=PenaltyKind.BOUNDARY_EQ)


@dataclass(frozen=True)
class DirichletDatum:
    """Prescribed temperature on the right edge with a nonnegative lifting.

    ``boundary_values`` holds the prescribed values at right-edge nodes
    (zero elsewhere); ``lifting`` is a nodal field that is nonnegative
    everywhere, matches the prescribed values on the right edge and
    vanishes on the left edge.  ``profile`` keeps the generating callable
    so the datum can be rebuilt on a refined mesh.
    """

    profile: Callable
    boundary_values: np.ndarray
    lifting: np.ndarray


def dirichlet_ramp(phi: Callable[[np.ndarray], np.ndarray], mesh: TriMesh) -> DirichletDatum:
    """Datum with profile phi(x2) on the right edge and lifting (x1/alpha)*phi(x2).

    phi must be nonnegative on [0, beta]; a negative nodal sample is
    rejected.  The lifting is interpolated nodally, so it inherits the
    nonnegativity of phi and vanishes on the left edge exactly.
    """
    lifting = nodal_field(mesh, lambda x1, x2: (x1 / mesh.alpha)
                          * np.broadcast_to(np.asarray(phi(x2), dtype=float), np.shape(x2)))
    if np.any(lifting < 0.0):
        bad = int(np.argmin(lifting))
        raise ValueError(
            f"invalid Dirichlet datum: phi < 0 near x2={mesh.nodes[bad, 1]:.6g} "
            f"(lifting value {lifting[bad]:.6g})")

    g2 = boundary_nodes(mesh, BoundaryTag.GAMMA2)
    boundary_values = np.zeros(mesh.n_nodes)
    boundary_values[g2] = np.asarray(phi(mesh.nodes[g2, 1]), dtype=float)
    for arr in (boundary_values, lifting):
        arr.setflags(write=False)
    return DirichletDatum(profile=phi, boundary_values=boundary_values, lifting=lifting)


def dirichlet_zero(mesh: TriMesh) -> DirichletDatum:
    """Homogeneous datum (zero prescribed temperature, zero lifting)."""
    return dirichlet_ramp(lambda x2: np.zeros_like(np.asarray(x2, dtype=float)), mesh)
