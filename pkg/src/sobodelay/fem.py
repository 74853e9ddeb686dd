"""Lagrange finite elements of degree 1-5 on segments and triangles.

Reference cells are ``[0, 1]`` and the triangle with vertices
``(0, 0), (1, 0), (0, 1)``.  Nodes are equispaced.  Functions of space are
called with a coordinate array ``x`` of shape ``(dim, ...)`` so that
``x[0]`` is the first coordinate, ``x[1]`` the second.

Matrices are returned as :class:`scipy.sparse.csr_matrix` with sorted,
unique column indices; coefficient vectors are plain 1-D float arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .errors import AssemblyError, InvalidArgumentError, UnsupportedError
from .mesh import FACET_VERTICES, Mesh

MAX_DEGREE = 5
MAX_QUAD_DEGREE = 30

SEGMENT = "segment"
TRIANGLE = "triangle"
_KIND_DIM = {SEGMENT: 1, TRIANGLE: 2}
_REF_VERTICES = {
    1: np.array([[0.0], [1.0]]),
    2: np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
}


def element_kind(dim: int) -> str:
    return SEGMENT if dim == 1 else TRIANGLE


def _check_kind(kind):
    if kind not in _KIND_DIM:
        raise InvalidArgumentError(f"unknown element kind {kind!r}")
    return _KIND_DIM[kind]


def _check_degree(p):
    if int(p) != p or not 1 <= p <= MAX_DEGREE:
        raise InvalidArgumentError(f"degree must be an integer in [1, {MAX_DEGREE}], got {p!r}")
    return int(p)


@lru_cache(maxsize=None)
def lattice(kind: str, p: int):
    """Integer lattice of reference nodes.

    Each entry is the tuple of barycentric weights (summing to ``p``)
    attached to the reference vertices.  Order: 1D left to right, 2D row by
    row in ``y`` then ``x``.
    """
    dim = _check_kind(kind)
    p = _check_degree(p)
    if dim == 1:
        return tuple((p - i, i) for i in range(p + 1))
    return tuple((p - i - j, i, j) for j in range(p + 1) for i in range(p + 1 - j))


def reference_nodes(kind: str, p: int) -> np.ndarray:
    bary = np.array(lattice(kind, p), dtype=float) / p
    return bary @ _REF_VERTICES[_KIND_DIM[kind]]


def _exponents(dim, p):
    if dim == 1:
        return [(i,) for i in range(p + 1)]
    return [(i, j) for j in range(p + 1) for i in range(p + 1 - j)]


@lru_cache(maxsize=None)
def _basis_coefficients(kind, p):
    dim = _KIND_DIM[kind]
    exps = _exponents(dim, p)
    nodes = reference_nodes(kind, p)
    V = np.ones((len(nodes), len(exps)))
    for k, e in enumerate(exps):
        for d in range(dim):
            V[:, k] *= nodes[:, d] ** e[d]
    # column i of C holds monomial coefficients of basis function i
    return np.linalg.solve(V, np.eye(len(nodes)))


def tabulate(kind: str, p: int, points) -> tuple[np.ndarray, np.ndarray]:
    """Basis values ``(npts, nloc)`` and reference gradients ``(npts, nloc, dim)``."""
    dim = _check_kind(kind)
    p = _check_degree(p)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != dim:
        pts = pts.reshape(-1, dim)
    exps = _exponents(dim, p)
    C = _basis_coefficients(kind, p)
    mono = np.ones((len(pts), len(exps)))
    dmono = np.zeros((len(pts), len(exps), dim))
    for k, e in enumerate(exps):
        for d in range(dim):
            mono[:, k] *= pts[:, d] ** e[d]
        for d in range(dim):
            if e[d] == 0:
                continue
            term = e[d] * pts[:, d] ** (e[d] - 1)
            for dd in range(dim):
                if dd != d:
                    term = term * pts[:, dd] ** e[dd]
            dmono[:, k, d] = term
    values = mono @ C
    grads = np.einsum("qkd,ki->qid", dmono, C)
    return values, grads


def reference_basis(kind: str, p: int, point) -> tuple[np.ndarray, np.ndarray]:
    """Lagrange basis values and gradients at one reference point.

    Raises
    ------
    InvalidArgumentError
        If the degree is unsupported or the point lies outside the
        reference simplex (tolerance 1e-12).
    """
    dim = _check_kind(kind)
    pt = np.asarray(point, dtype=float).reshape(dim)
    tol = 1e-12
    if np.any(pt < -tol) or pt.sum() > 1.0 + tol:
        raise InvalidArgumentError(f"point {pt} outside the reference {kind}")
    values, grads = tabulate(kind, p, pt[None, :])
    return values[0], grads[0]


@lru_cache(maxsize=None)
def _quadrature(kind, q):
    dim = _KIND_DIM[kind]
    n = max(1, math.ceil((q + 1) / 2))
    if dim == 1:
        s, w = np.polynomial.legendre.leggauss(n)
        return ((s + 1) / 2)[:, None], w / 2
    # collapsed (Duffy) product rule: Gauss-Jacobi in u absorbs the (1-u) factor
    su, wu = roots_jacobi(n, 1.0, 0.0)
    sv, wv = np.polynomial.legendre.leggauss(n)
    u = (1 + su) / 2
    v = (1 + sv) / 2
    U, Vv = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu / 4, wv / 2)
    pts = np.column_stack([U.ravel(), ((1 - U) * Vv).ravel()])
    return pts, W.ravel()


def quadrature_rule(kind: str, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Positive-weight rule exact for total degree ``<= q`` on the reference cell.

    Returns ``(points, weights)`` with points of shape ``(nq, dim)``.
    """
    _check_kind(kind)
    if int(q) != q or q < 1:
        raise InvalidArgumentError(f"exactness degree must be >= 1, got {q!r}")
    if q > MAX_QUAD_DEGREE:
        raise UnsupportedError(f"quadrature exactness {q} exceeds tabulated maximum {MAX_QUAD_DEGREE}")
    pts, w = _quadrature(kind, int(q))
    return pts.copy(), w.copy()


@dataclass(frozen=True, eq=False)
class QuadTable:
    """Basis data tabulated at the quadrature points of every cell.

    ``x`` has shape ``(dim, nc, nq)``; ``wdet`` holds weights times
    ``|det J|`` with shape ``(nc, nq)``; ``phi`` is ``(nq, nloc)`` and
    ``dphi`` the physical gradients ``(nc, nq, nloc, dim)``.
    """

    degree: int
    x: np.ndarray
    wdet: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    ref_points: np.ndarray


class FESpace:
    """Continuous Lagrange space of degree ``p`` on a simplicial mesh.

    Global DOFs are identified topologically: a node is labelled by the
    global vertices carrying non-zero barycentric weight, so nodes shared by
    neighbouring cells get the same index.
    """

    def __init__(self, mesh: Mesh, degree: int):
        self.mesh = mesh
        self.degree = _check_degree(degree)
        self.kind = element_kind(mesh.dim)
        self.dim = mesh.dim
        self._origins, self._J, det, self._Jinv = mesh.jacobians()
        bad = np.flatnonzero(np.abs(det) <= 0.0)
        if bad.size:
            raise AssemblyError(f"zero-measure cell {int(bad[0])}", cell=int(bad[0]))
        self._absdet = np.abs(det)

        lat = lattice(self.kind, self.degree)
        keys = {}
        cell_dofs = np.empty((mesh.n_cells, len(lat)), dtype=np.int64)
        for c, cell in enumerate(mesh.cells):
            for i, bary in enumerate(lat):
                key = tuple(sorted((int(cell[a]), w) for a, w in enumerate(bary) if w))
                cell_dofs[c, i] = keys.setdefault(key, len(keys))
        self.cell_dofs = cell_dofs
        self.n_dofs = len(keys)

        ref = reference_nodes(self.kind, self.degree)
        coords = np.empty((self.n_dofs, self.dim))
        phys = self._origins[:, None, :] + np.einsum("cij,qj->cqi", self._J, ref)
        coords[cell_dofs.ravel()] = phys.reshape(-1, self.dim)
        self.dof_coords = coords

        bdofs = set()
        for c, lf, _ in mesh.boundary_facets:
            on_facet = set(FACET_VERTICES[self.dim][lf])
            for i, bary in enumerate(lat):
                if all(a in on_facet for a, w in enumerate(bary) if w):
                    bdofs.add(int(cell_dofs[c, i]))
        self.boundary_dofs = np.array(sorted(bdofs), dtype=np.int64)
        self.boundary_dofs.setflags(write=False)
        self._tables = {}
        self._pattern = None

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.boundary_dofs] = False
        return np.flatnonzero(mask)

    @property
    def default_quad_degree(self) -> int:
        return 2 * self.degree + 2

    def quad(self, q: int | None = None) -> QuadTable:
        """Quadrature table of exactness ``q`` (default ``2p + 2``), cached."""
        q = self.default_quad_degree if q is None else int(q)
        table = self._tables.get(q)
        if table is None:
            pts, w = quadrature_rule(self.kind, q)
            phi, gref = tabulate(self.kind, self.degree, pts)
            x = self._origins[:, None, :] + np.einsum("cij,qj->cqi", self._J, pts)
            dphi = np.einsum("cka,qik->cqia", self._Jinv, gref)
            table = QuadTable(q, np.moveaxis(x, -1, 0), self._absdet[:, None] * w[None, :], phi, dphi, pts)
            self._tables[q] = table
        return table

    # -- evaluation at quadrature points ---------------------------------

    def values_at_quad(self, coeffs, table: QuadTable | None = None) -> np.ndarray:
        table = table or self.quad()
        return np.asarray(coeffs)[self.cell_dofs] @ table.phi.T

    def gradients_at_quad(self, coeffs, table: QuadTable | None = None) -> np.ndarray:
        """Physical gradients, shape ``(dim, nc, nq)``."""
        table = table or self.quad()
        local = np.asarray(coeffs)[self.cell_dofs]
        return np.moveaxis(np.einsum("ci,cqid->cqd", local, table.dphi), -1, 0)

    # -- scatter helpers --------------------------------------------------

    def _csr_from_local(self, local: np.ndarray, symmetric: bool = False) -> sp.csr_matrix:
        if symmetric:
            # exact symmetry: mirrored entries then accumulate identically
            local = 0.5 * (local + np.swapaxes(local, 1, 2))
        if self._pattern is None:
            nloc = self.cell_dofs.shape[1]
            rows = np.repeat(self.cell_dofs, nloc, axis=1).ravel()
            cols = np.tile(self.cell_dofs, (1, nloc)).ravel()
            keys, inverse = np.unique(rows * self.n_dofs + cols, return_inverse=True)
            urows = keys // self.n_dofs
            indptr = np.zeros(self.n_dofs + 1, dtype=np.int64)
            np.add.at(indptr, urows + 1, 1)
            self._pattern = (np.cumsum(indptr), keys % self.n_dofs, inverse.ravel(), len(keys))
        indptr, indices, inverse, nnz = self._pattern
        data = np.bincount(inverse, weights=local.ravel(), minlength=nnz)
        return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(self.n_dofs, self.n_dofs))

    def _vector_from_local(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.cell_dofs.ravel(), weights=local.ravel(), minlength=self.n_dofs)


def build_space(mesh: Mesh, degree: int) -> FESpace:
    return FESpace(mesh, degree)


def _pointwise(space, table, func, what):
    if callable(func):
        vals = np.asarray(func(table.x), dtype=float)
    else:
        vals = np.asarray(func, dtype=float)
    vals = np.broadcast_to(vals, table.wdet.shape)
    bad = ~np.isfinite(vals)
    if bad.any():
        cell = int(np.argwhere(bad)[0][0])
        raise AssemblyError(f"non-finite {what} in cell {cell}", cell=cell)
    return vals


def assemble_mass(space: FESpace) -> sp.csr_matrix:
    """Consistent mass matrix ``M_ij = (phi_i, phi_j)``."""
    t = space.quad()
    local = np.einsum("cq,qi,qj->cij", t.wdet, t.phi, t.phi)
    return space._csr_from_local(local, symmetric=True)


def assemble_stiffness(space: FESpace) -> sp.csr_matrix:
    """Stiffness matrix ``K_ij = (grad phi_i, grad phi_j)``."""
    t = space.quad()
    local = np.einsum("cq,cqid,cqjd->cij", t.wdet, t.dphi, t.dphi)
    return space._csr_from_local(local, symmetric=True)


def assemble_A(space: FESpace, beta: float, *, allow_zero: bool = False) -> sp.csr_matrix:
    """Combined Sobolev operator ``A = M + beta K``.

    ``beta = 0`` is accepted only with ``allow_zero=True``.
    """
    if not beta > 0 and not (allow_zero and beta == 0):
        raise InvalidArgumentError(f"beta must be positive, got {beta!r}")
    return (assemble_mass(space) + beta * assemble_stiffness(space)).tocsr()


def assemble_weighted_mass(space: FESpace, weight) -> sp.csr_matrix:
    """``W_ij = integral of weight * phi_i * phi_j``.

    ``weight`` is a callable of the coordinate array or an array of values
    at the default quadrature points, shape ``(nc, nq)``.
    """
    t = space.quad()
    w = _pointwise(space, t, weight, "weight")
    local = np.einsum("cq,qi,qj->cij", t.wdet * w, t.phi, t.phi)
    return space._csr_from_local(local, symmetric=True)


def assemble_load(space: FESpace, source) -> np.ndarray:
    """Load vector ``b_i = integral of source * phi_i``."""
    t = space.quad()
    s = _pointwise(space, t, source, "source")
    local = (t.wdet * s) @ t.phi
    return space._vector_from_local(local)


def assemble_boundary(space: FESpace) -> sp.csr_matrix:
    """Boundary form ``B_ij = integral over the boundary of phi_i (grad phi_j . n)``.

    ``w @ B @ u`` is the boundary flux term of Green's formula for ``u``
    tested against ``w``.
    """
    mesh = space.mesh
    p = space.degree
    if space.dim == 1:
        svals, sweights = np.zeros((1, 0)), np.ones(1)
    else:
        g, gw = np.polynomial.legendre.leggauss(p + 1)
        svals, sweights = (g + 1) / 2, gw / 2
    ref = _REF_VERTICES[space.dim]
    rows, cols, data = [], [], []
    for c, lf, normal in mesh.boundary_facets:
        lverts = FACET_VERTICES[space.dim][lf]
        if space.dim == 1:
            pts = ref[[lverts[0]]]
            measure = 1.0
        else:
            a, b = ref[lverts[0]], ref[lverts[1]]
            pts = a[None, :] + svals[:, None] * (b - a)[None, :]
            va, vb = mesh.vertices[mesh.cells[c][list(lverts)]]
            measure = float(np.linalg.norm(vb - va))
        phi, gref = tabulate(space.kind, p, pts)
        grad = gref @ space._Jinv[c]
        flux = grad @ normal
        local = np.einsum("q,qi,qj->ij", sweights * measure, phi, flux)
        dofs = space.cell_dofs[c]
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        data.append(local.ravel())
    B = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.n_dofs, space.n_dofs),
    )
    return B.tocsr()


def green_identity_residual(space: FESpace, u, w, laplacian) -> float:
    """``|(lap u, w) - [a_bdry(u, w) - a(u, w)]|`` for an interpolated ``u``.

    ``laplacian`` is the analytic Laplacian of the function ``u``
    interpolates, as a callable of the coordinate array.
    """
    t = space.quad()
    lhs = np.sum(t.wdet * _pointwise(space, t, laplacian, "laplacian") * space.values_at_quad(w, t))
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    rhs = w @ (assemble_boundary(space) @ u) - w @ (assemble_stiffness(space) @ u)
    return float(abs(lhs - rhs))


def interpolate(space: FESpace, func, t: float = 0.0) -> np.ndarray:
    """Nodal interpolant of ``func(x, t)``."""
    x = space.dof_coords.T
    vals = np.asarray(func(x, t), dtype=float)
    vals = np.broadcast_to(vals, (space.n_dofs,)).copy()
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise InvalidArgumentError(
            f"non-finite value at node {space.dof_coords[bad[0]].tolist()} (t={t})"
        )
    return vals


def evaluate_fe(space: FESpace, coeffs, cell: int, ref_point):
    """Value and physical gradient of an FE function at a reference point of ``cell``."""
    if not 0 <= cell < space.mesh.n_cells:
        raise InvalidArgumentError(f"cell index {cell} out of range")
    phi, gref = reference_basis(space.kind, space.degree, ref_point)
    local = np.asarray(coeffs)[space.cell_dofs[cell]]
    value = float(local @ phi)
    grad = (local @ gref) @ space._Jinv[cell]
    return value, grad


def locate(space: FESpace, point):
    """Cell index and reference coordinates of a physical point."""
    pt = np.asarray(point, dtype=float).reshape(space.dim)
    ref = np.einsum("cij,cj->ci", space._Jinv, pt[None, :] - space._origins)
    slack = np.minimum(ref.min(axis=1), 1.0 - ref.sum(axis=1))
    c = int(np.argmax(slack))
    if slack[c] < -1e-10:
        raise InvalidArgumentError(f"point {pt.tolist()} outside the mesh")
    return c, np.clip(ref[c], 0.0, 1.0)


def dump_coo(matrix, path) -> None:
    """Write ``row col value`` lines for every stored entry."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
