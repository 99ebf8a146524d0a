"""P1 finite-element operators on a triangulated rectangle.

Assembles the stiffness matrix of the Dirichlet form, the L2 mass matrix,
boundary mass matrices on the right edge and on the bottom/top edges, the
lumped quadrature weights used for the nonsmooth boundary functional, and
the discrete embedding constants (Friedrichs-Poincare and trace) that enter
the contraction condition of the solver.

Fields are plain numpy arrays of nodal values.  A field that represents an
element of the working space vanishes at every left-edge node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import BoundaryTag, TriMesh, boundary_nodes, triangle_areas


class AssemblyError(RuntimeError):
    """Raised when element matrices cannot be assembled."""


class NumericError(RuntimeError):
    """Raised when an iterative numerical procedure fails to converge."""


@dataclass
class FeOperators:
    """Assembled operators for one mesh.

    stiffness, mass, gamma2_mass, gamma3_mass are symmetric CSR matrices of
    size n_nodes; the boundary matrices are zero off their boundary part.
    gamma3_weights / gamma2_weights are the row sums of the boundary mass
    matrices (lumped quadrature), lumped_mass the row sums of the L2 mass
    matrix.  free_dofs lists the nodes not on the left (homogeneous
    Dirichlet) edge.  Immutable by convention once assembled.
    """

    mesh: TriMesh
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    gamma2_mass: sp.csr_matrix
    gamma3_mass: sp.csr_matrix
    lumped_mass: np.ndarray
    gamma2_weights: np.ndarray
    gamma3_weights: np.ndarray
    gamma1_nodes: np.ndarray
    gamma2_nodes: np.ndarray
    gamma3_nodes: np.ndarray
    free_dofs: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    def constants(self, rtol: float = 1e-8, max_iter: int = 50000) -> tuple[float, float]:
        """Cached (poincare, trace) discrete constants, see discrete_constants."""
        key = ("constants", rtol)
        if key not in self._cache:
            self._cache[key] = discrete_constants(self, rtol=rtol, max_iter=max_iter)
        return self._cache[key]


def _edge_mass(mesh: TriMesh, tag: BoundaryTag) -> sp.csr_matrix:
    # exact 1D P1 mass on each tagged edge: (L/6) [[2,1],[1,2]]
    sel = mesh.edge_tags == tag
    edges = mesh.boundary_edges[sel]
    rows, cols, vals = [], [], []
    for n0, n1 in edges:
        length = float(np.linalg.norm(mesh.nodes[n1] - mesh.nodes[n0]))
        local = (length / 6.0) * np.array([[2.0, 1.0], [1.0, 2.0]])
        for a, na in enumerate((n0, n1)):
            for b, nb in enumerate((n0, n1)):
                rows.append(na)
                cols.append(nb)
                vals.append(local[a, b])
    n = mesh.n_nodes
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble(mesh: TriMesh) -> FeOperators:
    """Assemble all P1 operators for the given mesh.

    Element matrices are exact for affine elements: the local stiffness
    uses the analytic gradients of the barycentric basis and the local mass
    is (A/12)(1 + I).  Raises AssemblyError naming the first triangle whose
    area is not strictly positive.
    """
    areas = triangle_areas(mesh)
    scale = mesh.alpha * mesh.beta
    bad = np.nonzero(areas <= 1e-14 * scale)[0]
    if bad.size:
        raise AssemblyError(f"triangle {int(bad[0])} is degenerate (area {areas[bad[0]]:.3e})")

    tris = mesh.triangles
    p = mesh.nodes[tris]  # (nt, 3, 2)
    # b_i = y_{i+1} - y_{i+2}, c_i = x_{i+2} - x_{i+1} (cyclic), grad phi_i = (b_i, c_i) / (2A)
    nxt = [1, 2, 0]
    prv = [2, 0, 1]
    b = p[:, nxt, 1] - p[:, prv, 1]
    c = p[:, prv, 0] - p[:, nxt, 0]

    nt = tris.shape[0]
    k_local = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) \
        / (4.0 * areas)[:, None, None]
    m_local = (areas / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))[None, :, :]

    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = mesh.n_nodes
    stiffness = sp.csr_matrix((k_local.ravel(), (rows, cols)), shape=(n, n))
    mass = sp.csr_matrix((m_local.ravel(), (rows, cols)), shape=(n, n))

    gamma2_mass = _edge_mass(mesh, BoundaryTag.GAMMA2)
    gamma3_mass = _edge_mass(mesh, BoundaryTag.GAMMA3)

    g1 = boundary_nodes(mesh, BoundaryTag.GAMMA1)
    g2 = boundary_nodes(mesh, BoundaryTag.GAMMA2)
    g3 = boundary_nodes(mesh, BoundaryTag.GAMMA3)
    free = np.setdiff1d(np.arange(n), g1)

    return FeOperators(
        mesh=mesh,
        stiffness=stiffness,
        mass=mass,
        gamma2_mass=gamma2_mass,
        gamma3_mass=gamma3_mass,
        lumped_mass=np.asarray(mass.sum(axis=1)).ravel(),
        gamma2_weights=np.asarray(gamma2_mass.sum(axis=1)).ravel(),
        gamma3_weights=np.asarray(gamma3_mass.sum(axis=1)).ravel(),
        gamma1_nodes=g1,
        gamma2_nodes=g2,
        gamma3_nodes=g3,
        free_dofs=free,
    )


def nodal_field(mesh: TriMesh, fn) -> np.ndarray:
    """Nodal interpolation of a callable fn(x1, x2) (vectorized over arrays)."""
    vals = fn(mesh.nodes[:, 0], mesh.nodes[:, 1])
    return np.broadcast_to(np.asarray(vals, dtype=float), (mesh.n_nodes,)).copy()


def v_norm(ops: FeOperators, v: np.ndarray) -> float:
    """Full H1 norm sqrt(v'(S+M)v) of a nodal field."""
    v = np.asarray(v, dtype=float)
    if v.shape != (ops.n_nodes,):
        raise ValueError("field does not conform to the mesh")
    return float(np.sqrt(max(v @ (ops.stiffness @ v) + v @ (ops.mass @ v), 0.0)))


def l2_norm(ops: FeOperators, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (ops.mass @ v), 0.0)))


def gamma2_norm(ops: FeOperators, v: np.ndarray) -> float:
    """L2 norm of the trace on the right edge."""
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (ops.gamma2_mass @ v), 0.0)))


def gamma3_norm(ops: FeOperators, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (ops.gamma3_mass @ v), 0.0)))


def _power_max_gen_eig(bmat, amat, rtol, max_iter, what):
    """Largest lam with B x = lam A x (A SPD) by power iteration on A^-1 B.

    Stops once the Rayleigh quotient is stable to rtol over three
    consecutive iterations.  Returns (lam, x).
    """
    n = bmat.shape[0]
    lu = spla.splu(sp.csc_matrix(amat))
    x = np.ones(n) + np.linspace(0.0, 0.5, n)  # deterministic start
    x /= np.linalg.norm(x)
    lam = 0.0
    stable = 0
    for _ in range(max_iter):
        y = lu.solve(bmat @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            raise NumericError(f"power iteration for {what} broke down")
        x = y / ny
        lam_new = float((x @ (bmat @ x)) / (x @ (amat @ x)))
        if abs(lam_new - lam) <= rtol * max(abs(lam_new), 1e-300):
            stable += 1
            if stable >= 3:
                return lam_new, x
        else:
            stable = 0
        lam = lam_new
    raise NumericError(f"power iteration for {what} did not converge in {max_iter} iterations")


def discrete_constants(ops: FeOperators, rtol: float = 1e-8,
                       max_iter: int = 50000) -> tuple[float, float]:
    """Sharp constants of the discrete Friedrichs-Poincare and trace bounds.

    Returns (c0, c3) with  ||v||_V <= c0 ||grad v||  and
    ||v||_{L2(bottom+top)} <= c3 ||v||_V  for every field vanishing on the
    left edge, computed from the largest generalized eigenvalues
    (S+M) x = lam S x  and  B3 x = lam (S+M) x on the free nodes.
    """
    c0, c3, _, _ = poincare_trace_details(ops, rtol=rtol, max_iter=max_iter)
    return c0, c3


def poincare_trace_details(ops: FeOperators, rtol: float = 1e-8,
                           max_iter: int = 50000):
    """Like discrete_constants but also returns the extremal fields."""
    free = ops.free_dofs
    if free.size == 0:
        raise ValueError("no free degrees of freedom")
    s = ops.stiffness[np.ix_(free, free)]
    sm = s + ops.mass[np.ix_(free, free)]
    b3 = ops.gamma3_mass[np.ix_(free, free)]

    lam0, x0 = _power_max_gen_eig(sm, s, rtol, max_iter, "the Poincare constant")
    lam3, x3 = _power_max_gen_eig(b3, sm, rtol, max_iter, "the trace constant")

    v0 = np.zeros(ops.n_nodes)
    v0[free] = x0
    v3 = np.zeros(ops.n_nodes)
    v3[free] = x3
    return float(np.sqrt(lam0)), float(np.sqrt(lam3)), v0, v3


def export_coo(matrix, path) -> None:
    """Write a sparse matrix as text: header 'nrows ncols nnz', then 'i j value' lines."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
