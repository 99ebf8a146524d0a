"""Structured triangulations of a rectangle with tagged boundary parts.

The domain is the rectangle (0, alpha) x (0, beta).  Its boundary is split
into three disjoint parts: the left edge (homogeneous Dirichlet), the right
edge (prescribed temperature) and the union of bottom and top edges, where
the nonsmooth heat-exchange law acts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np


class BoundaryTag(IntEnum):
    """Labels for the three parts of the rectangle boundary.

    GAMMA1 is the left edge x1 = 0, GAMMA2 the right edge x1 = alpha and
    GAMMA3 the bottom and top edges.  The parts are pairwise disjoint.
    """

    GAMMA1 = 1
    GAMMA2 = 2
    GAMMA3 = 3

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class TriMesh:
    """Uniform triangulation of the rectangle (0, alpha) x (0, beta).

    Nodes are numbered row-major: node (i, j) has index j*(nx+1) + i and
    coordinates (i*alpha/nx, j*beta/ny).  Every grid cell is split along
    the diagonal from its lower-left to its upper-right corner, giving
    counter-clockwise triangles.  ``boundary_edges`` is an (m, 2) int array
    and ``edge_tags`` the matching (m,) array of BoundaryTag values.

    Instances are immutable after construction and safe to share.
    """

    alpha: float
    beta: float
    nx: int
    ny: int
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def node_index(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i


def build_rect_mesh(alpha: float, beta: float, nx: int, ny: int) -> TriMesh:
    """Build the uniform triangulation with (nx+1)*(ny+1) nodes.

    Parameters
    ----------
    alpha, beta : float
        Positive side lengths of the rectangle.
    nx, ny : int
        Number of subdivisions (at least 1) per direction.

    Returns
    -------
    TriMesh
        Mesh with 2*nx*ny triangles and tagged boundary edges.
    """
    if not (alpha > 0.0 and beta > 0.0):
        raise ValueError(f"domain sides must be positive, got alpha={alpha}, beta={beta}")
    if nx < 1 or ny < 1:
        raise ValueError(f"subdivision counts must be >= 1, got nx={nx}, ny={ny}")

    xs = np.linspace(0.0, alpha, nx + 1)
    ys = np.linspace(0.0, beta, ny + 1)
    xx, yy = np.meshgrid(xs, ys)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    tris = []
    for j in range(ny):
        for i in range(nx):
            n00 = j * (nx + 1) + i
            n10 = n00 + 1
            n01 = n00 + (nx + 1)
            n11 = n01 + 1
            tris.append((n00, n10, n11))
            tris.append((n00, n11, n01))
    triangles = np.asarray(tris, dtype=np.int64)

    edges = []
    tags = []
    for j in range(ny):  # left and right columns
        edges.append((j * (nx + 1), (j + 1) * (nx + 1)))
        tags.append(BoundaryTag.GAMMA1)
        edges.append((j * (nx + 1) + nx, (j + 1) * (nx + 1) + nx))
        tags.append(BoundaryTag.GAMMA2)
    for i in range(nx):  # bottom and top rows
        edges.append((i, i + 1))
        tags.append(BoundaryTag.GAMMA3)
        top = ny * (nx + 1)
        edges.append((top + i, top + i + 1))
        tags.append(BoundaryTag.GAMMA3)
    boundary_edges = np.asarray(edges, dtype=np.int64)
    edge_tags = np.asarray(tags, dtype=np.int64)

    for arr in (nodes, triangles, boundary_edges, edge_tags):
        arr.setflags(write=False)
    return TriMesh(float(alpha), float(beta), int(nx), int(ny),
                   nodes, triangles, boundary_edges, edge_tags)


def triangle_areas(mesh: TriMesh) -> np.ndarray:
    """Signed areas of all triangles (positive for counter-clockwise)."""
    p = mesh.nodes[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def boundary_nodes(mesh: TriMesh, tag: BoundaryTag) -> np.ndarray:
    """Sorted node indices belonging to the given boundary part.

    A node belongs to a part if it is incident to an edge carrying the tag.
    Corner nodes shared between GAMMA3 and a Dirichlet part (GAMMA1 or
    GAMMA2) are assigned to the Dirichlet part, so the three node sets
    partition the boundary nodes.
    """
    tag = BoundaryTag(tag)
    incident = np.unique(mesh.boundary_edges[mesh.edge_tags == tag])
    if tag is BoundaryTag.GAMMA3:
        dirichlet = np.unique(mesh.boundary_edges[mesh.edge_tags != tag])
        incident = np.setdiff1d(incident, dirichlet)
    return incident


def prolong(coarse: TriMesh, fine: TriMesh, values: np.ndarray) -> np.ndarray:
    """P1 prolongation of nodal values from a mesh to its uniform refinement.

    ``fine`` must be the mesh with doubled subdivision counts on the same
    rectangle; its nodes then contain the coarse nodes, the coarse edge
    midpoints and the coarse cell centers (which lie on the split diagonal).
    """
    if fine.nx != 2 * coarse.nx or fine.ny != 2 * coarse.ny \
            or fine.alpha != coarse.alpha or fine.beta != coarse.beta:
        raise ValueError("fine mesh is not the uniform refinement of the coarse mesh")
    values = np.asarray(values, dtype=float)
    if values.shape != (coarse.n_nodes,):
        raise ValueError("values do not conform to the coarse mesh")

    out = np.empty(fine.n_nodes)
    for j in range(fine.ny + 1):
        for i in range(fine.nx + 1):
            ic, jc = i // 2, j // 2
            if i % 2 == 0 and j % 2 == 0:
                v = values[coarse.node_index(ic, jc)]
            elif j % 2 == 0:  # midpoint of a horizontal coarse edge
                v = 0.5 * (values[coarse.node_index(ic, jc)]
                           + values[coarse.node_index(ic + 1, jc)])
            elif i % 2 == 0:  # midpoint of a vertical coarse edge
                v = 0.5 * (values[coarse.node_index(ic, jc)]
                           + values[coarse.node_index(ic, jc + 1)])
            else:  # cell center, lies on the lower-left/upper-right diagonal
                v = 0.5 * (values[coarse.node_index(ic, jc)]
                           + values[coarse.node_index(ic + 1, jc + 1)])
            out[fine.node_index(i, j)] = v
    return out


def dump_mesh_csv(mesh: TriMesh, outdir) -> list[Path]:
    """Write nodes.csv (id,x,y), tris.csv (id,n0,n1,n2) and edges.csv (n0,n1,tag)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []

    path = outdir / "nodes.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"])
        for k, (x, y) in enumerate(mesh.nodes):
            w.writerow([k, f"{x:.17g}", f"{y:.17g}"])
    paths.append(path)

    path = outdir / "tris.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "n0", "n1", "n2"])
        for k, tri in enumerate(mesh.triangles):
            w.writerow([k, *map(int, tri)])
    paths.append(path)

    path = outdir / "edges.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n0", "n1", "tag"])
        for (n0, n1), tag in zip(mesh.boundary_edges, mesh.edge_tags):
            w.writerow([int(n0), int(n1), BoundaryTag(tag).label])
    paths.append(path)

    return paths
