"""Interval and structured unit-square meshes.

Cells are simplices: segments in 1D, triangles in 2D.  Local facet ``i``
of a cell is the facet opposite local vertex ``i`` (for a segment the
facet is the vertex itself, so facet 0 sits at the left end).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgumentError

# facet -> local vertices
FACET_VERTICES = {
    1: ((0,), (1,)),
    2: ((1, 2), (2, 0), (0, 1)),
}

REFERENCE_MEASURE = {1: 1.0, 2: 0.5}


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh with boundary facet bookkeeping.

    Attributes
    ----------
    dim : int
        Spatial dimension (1 or 2).
    vertices : ndarray, shape (n_vertices, dim)
    cells : ndarray of int, shape (n_cells, dim + 1)
    boundary_facets : list of (cell, local_facet, normal)
        ``normal`` is the outward unit normal as an ndarray of length dim.
    h : float
        Maximum cell diameter.
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: list = field(default_factory=list)
    h: float = 0.0

    def __post_init__(self):
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def jacobians(self):
        """Affine data for every cell.

        Returns ``(origins, J, detJ, Jinv)`` with shapes ``(nc, dim)``,
        ``(nc, dim, dim)``, ``(nc,)`` and ``(nc, dim, dim)``.
        """
        pts = self.vertices[self.cells]
        origins = pts[:, 0, :]
        J = np.transpose(pts[:, 1:, :] - origins[:, None, :], (0, 2, 1))
        det = np.linalg.det(J)
        Jinv = np.full_like(J, np.nan)
        ok = det != 0.0
        Jinv[ok] = np.linalg.inv(J[ok])
        return origins, J, det, Jinv

    def cell_measures(self) -> np.ndarray:
        _, _, det, _ = self.jacobians()
        return np.abs(det) * REFERENCE_MEASURE[self.dim]

    def cell_diameters(self) -> np.ndarray:
        pts = self.vertices[self.cells]
        k = pts.shape[1]
        diam = np.zeros(self.n_cells)
        for a in range(k):
            for b in range(a + 1, k):
                diam = np.maximum(diam, np.linalg.norm(pts[:, a] - pts[:, b], axis=1))
        return diam


class CellGeometry(NamedTuple):
    origin: np.ndarray
    jacobian: np.ndarray
    det: float
    inverse: np.ndarray

    def map(self, ref_point):
        """Map reference coordinates to the physical cell."""
        return self.origin + self.jacobian @ np.asarray(ref_point, dtype=float)


def _boundary_facets(dim, vertices, cells):
    counts = {}
    for c, cell in enumerate(cells):
        for lf, lverts in enumerate(FACET_VERTICES[dim]):
            key = tuple(sorted(int(cell[i]) for i in lverts))
            counts.setdefault(key, []).append((c, lf))
    facets = []
    for key, owners in counts.items():
        if len(owners) > 2:
            raise InvalidArgumentError(f"facet {key} shared by {len(owners)} cells")
        if len(owners) == 1:
            c, lf = owners[0]
            facets.append((c, lf, _outward_normal(dim, vertices, cells[c], lf)))
    facets.sort(key=lambda item: (item[0], item[1]))
    return facets


def _outward_normal(dim, vertices, cell, lf):
    pts = vertices[cell]
    if dim == 1:
        other = pts[1 - lf, 0]
        return np.array([np.sign(pts[lf, 0] - other)])
    a, b = (pts[i] for i in FACET_VERTICES[2][lf])
    edge = b - a
    n = np.array([edge[1], -edge[0]])
    n /= np.linalg.norm(n)
    if np.dot(n, pts[lf] - a) > 0:
        n = -n
    return n


def _finalize(dim, vertices, cells):
    vertices = np.asarray(vertices, dtype=float).reshape(-1, dim)
    cells = np.asarray(cells, dtype=np.int64)
    mesh = Mesh(dim, vertices, cells, _boundary_facets(dim, vertices, cells), 0.0)
    if np.any(mesh.cell_measures() <= 0.0):
        raise InvalidArgumentError("mesh contains a cell of non-positive measure")
    object.__setattr__(mesh, "h", float(mesh.cell_diameters().max()))
    return mesh


def build_interval_mesh(a: float, b: float, n_cells: int) -> Mesh:
    """Uniform mesh of ``[a, b]`` with ``n_cells`` segments."""
    if int(n_cells) != n_cells or n_cells < 1:
        raise InvalidArgumentError(f"n_cells must be a positive integer, got {n_cells!r}")
    if not a < b:
        raise InvalidArgumentError(f"need a < b, got a={a}, b={b}")
    n_cells = int(n_cells)
    x = a + (b - a) * np.arange(n_cells + 1) / n_cells
    x[-1] = b
    cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    return _finalize(1, x, cells)


def build_unit_square_tri_mesh(n: int) -> Mesh:
    """Structured triangulation of the unit square.

    Each of the ``n * n`` sub-squares is cut along the diagonal joining its
    lower-right and upper-left corners.
    """
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    ticks = np.arange(n + 1) / n
    X, Y = np.meshgrid(ticks, ticks, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = []
    for j in range(n):
        for i in range(n):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            cells.append((v00, v10, v01))
            cells.append((v11, v01, v10))
    return _finalize(2, vertices, cells)


def cell_geometry(mesh: Mesh, cell: int) -> CellGeometry:
    if not 0 <= cell < mesh.n_cells:
        raise InvalidArgumentError(f"cell index {cell} out of range [0, {mesh.n_cells})")
    pts = mesh.vertices[mesh.cells[cell]]
    J = (pts[1:] - pts[0]).T
    return CellGeometry(pts[0].copy(), J, float(np.linalg.det(J)), np.linalg.inv(J))


def write_mesh(mesh: Mesh, path) -> None:
    """Dump as text: header ``dim n_vertices n_cells``, coordinates, then cells."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells}\n")
        for v in mesh.vertices:
            fh.write(" ".join(repr(float(c)) for c in v) + "\n")
        for c in mesh.cells:
            fh.write(" ".join(str(int(i)) for i in c) + "\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        dim, nv, nc = (int(t) for t in fh.readline().split())
        verts = [[float(t) for t in fh.readline().split()] for _ in range(nv)]
        cells = [[int(t) for t in fh.readline().split()] for _ in range(nc)]
    return _finalize(dim, verts, cells)
