"""Quadrature, isoparametric Poisson assembly, penalty Dirichlet conditions,
sparse solves and error norms on manifold basis tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import pou_basis as pb
from .quadmesh import ControlMesh, MeshError


class FemError(ValueError):
    pass


@dataclass
class QuadRule:
    """Tensor Gauss-Legendre rule on the open unit square."""
    points: np.ndarray   # (n*n, 2)
    weights: np.ndarray  # (n*n,)
    n: int

    def line_rule(self):
        """The underlying 1D rule on (0, 1)."""
        x, w = np.polynomial.legendre.leggauss(self.n)
        return 0.5 * (x + 1.0), 0.5 * w


def gauss_rule(n: int) -> QuadRule:
    if n < 1:
        raise FemError("need at least one Gauss point per direction")
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    X, Y = np.meshgrid(x, x, indexing="ij")
    WX, WY = np.meshgrid(w, w, indexing="ij")
    return QuadRule(np.stack([X.ravel(), Y.ravel()], axis=1),
                    (WX * WY).ravel(), n)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dof_of: np.ndarray        # (n_vertices, ncomp) -> dof index or -1
    ncomp: int = 1

    @property
    def n_dofs(self):
        return self.rhs.shape[0]

    def vertex_coefficients(self, solution):
        """Scatter a dof vector back to per-vertex coefficients."""
        out = np.zeros(self.dof_of.shape)
        mask = self.dof_of >= 0
        out[mask] = solution[self.dof_of[mask]]
        if self.ncomp == 1:
            return out[:, 0]
        return out


def _accumulate(rows, cols, vals, order, n):
    """Deterministic triplet accumulation: summation order is fixed by
    (row, col, order) regardless of element traversal order."""
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    order = np.concatenate(order)
    perm = np.lexsort((order, cols, rows))
    rows, cols, vals = rows[perm], cols[perm], vals[perm]
    new = np.empty(len(rows), bool)
    new[0] = True
    new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    starts = np.nonzero(new)[0]
    sums = np.add.reduceat(vals, starts)
    return sp.csr_matrix((sums, (rows[starts], cols[starts])), shape=(n, n))


def _accumulate_vector(idx, vals, order, n):
    idx = np.concatenate(idx)
    vals = np.concatenate(vals)
    order = np.concatenate(order)
    perm = np.lexsort((order, idx))
    idx, vals = idx[perm], vals[perm]
    out = np.zeros(n)
    new = np.empty(len(idx), bool)
    if len(idx) == 0:
        return out
    new[0] = True
    new[1:] = idx[1:] != idx[:-1]
    starts = np.nonzero(new)[0]
    np.add.at(out, idx[starts], np.add.reduceat(vals, starts))
    return out


def build_dof_map(mesh: ControlMesh, table: pb.BasisTable, ncomp=1):
    """Vertices contributing to any tabulated element get dofs, ordered by
    vertex id; everything else (deep ghosts) is excluded."""
    used = np.zeros(mesh.n_vertices, bool)
    for e in table.elements:
        ids, _, _, _ = table.entry(e)
        used[ids] = True
    dof_of = np.full((mesh.n_vertices, ncomp), -1, np.int64)
    order = np.nonzero(used)[0]
    for c in range(ncomp):
        dof_of[order, c] = np.arange(len(order)) * ncomp + c
    return dof_of


def geometry_at_points(mesh, ids, N, dN, d2N=None, dim=2):
    """Geometry map and derivatives at tabulated points of one element."""
    X = mesh.vertices[ids][:, :dim]
    x = np.einsum("qn,na->qa", N, X)
    J = np.einsum("qnb,na->qab", dN, X)
    if d2N is None:
        return x, J, None
    H = np.einsum("qnbc,na->qabc", d2N, X)
    return x, J, H


def assemble_poisson(mesh: ControlMesh, table: pb.BasisTable,
                     source) -> SparseSystem:
    """Stiffness and load for -div(grad u) = q with isoparametric geometry
    (the same basis interpolates vertex coordinates)."""
    dof_of = build_dof_map(mesh, table, ncomp=1)
    n = int(dof_of.max()) + 1
    w = table.weights
    rows, cols, vals, order = [], [], [], []
    fidx, fvals, forder = [], [], []
    for e in table.elements:
        ids, N, dN, _ = table.entry(e)
        x, J, _ = geometry_at_points(mesh, ids, N, dN)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if det.min() <= 1e-14:
            q = int(np.argmin(det))
            raise FemError(f"singular geometry Jacobian in element {e} "
                           f"at quadrature point {q} (det={det[q]:.3e})")
        Jinv = np.linalg.inv(J)
        gradx = np.einsum("qnb,qba->qna", dN, Jinv)
        ke = np.einsum("q,qna,qma->nm", w * det, gradx, gradx)
        fe = np.einsum("q,qn->n", w * det * source(x), N)
        d = dof_of[ids, 0]
        rows.append(np.repeat(d, len(d)))
        cols.append(np.tile(d, len(d)))
        vals.append(ke.ravel())
        order.append(np.full(len(d) ** 2, e, np.int64))
        fidx.append(d)
        fvals.append(fe)
        forder.append(np.full(len(d), e, np.int64))
    K = _accumulate(rows, cols, vals, order, n)
    f = _accumulate_vector(fidx, fvals, forder, n)
    return SparseSystem(K, f, dof_of, 1)


# -- boundary handling ---------------------------------------------------------

_EDGE_PARAM = {
    0: lambda t: np.stack([t, np.zeros_like(t)], axis=1),
    1: lambda t: np.stack([np.ones_like(t), t], axis=1),
    2: lambda t: np.stack([1.0 - t, np.ones_like(t)], axis=1),
    3: lambda t: np.stack([np.zeros_like(t), 1.0 - t], axis=1),
}


def boundary_edge_elements(mesh: ControlMesh):
    """(element, local_edge) pairs of non-ghost elements along the domain
    boundary of a ghosted mesh, in loop order."""
    out = []
    for loop in mesh.boundary_loops():
        for i, a in enumerate(loop):
            b = loop[(i + 1) % len(loop)]
            h = mesh._edge_map.get((a, b))
            if h is None or mesh.quad_ghost[h // 4]:
                raise MeshError(
                    f"no core element along boundary edge ({a},{b})")
            out.append((h // 4, h % 4))
    return out


@dataclass
class BoundarySample:
    """Basis data along one boundary edge of one element: quadrature params,
    arc-length weights, basis rows and target values."""
    element: int
    ids: np.ndarray
    N: np.ndarray       # (m, nc)
    ds: np.ndarray      # (m,) arc-length weights (|dx/dt| * w_t)
    x: np.ndarray       # (m, dim) physical sample positions


def dirichlet_samples(mesh, bspec, pspec, n_gauss=9, dim=2, edge_cache=None):
    """Boundary quadrature rows for penalty terms, one entry per boundary
    edge of the ghosted mesh."""
    t, wt = np.polynomial.legendre.leggauss(n_gauss)
    t = 0.5 * (t + 1.0)
    wt = 0.5 * wt
    edges = (boundary_edge_elements(mesh) if edge_cache is None
             else edge_cache)
    samples = []
    for e, k in edges:
        eta = _EDGE_PARAM[k](t)
        ids, N, dN, _ = pb.evaluate_points(mesh, e, eta, bspec, pspec,
                                           order=1)
        ids = np.asarray(ids, np.int64)
        X = mesh.vertices[ids][:, :dim]
        x = np.einsum("qn,na->qa", N, X)
        J = np.einsum("qnb,na->qab", dN, X)
        # d(eta)/dt along the edge
        deta = {0: [1, 0], 1: [0, 1], 2: [-1, 0], 3: [0, -1]}[k]
        dxdt = np.einsum("qab,b->qa", J, np.asarray(deta, float))
        ds = np.linalg.norm(dxdt, axis=1) * wt
        samples.append(BoundarySample(e, ids, N, ds, x))
    return samples


def apply_penalty_dirichlet(system: SparseSystem, samples, g,
                            beta: float) -> SparseSystem:
    """Add beta * integral(N_I N_J) over the boundary to K and
    beta * integral(N_I g) to f."""
    if beta <= 0:
        raise FemError("penalty parameter must be positive")
    n = system.n_dofs
    rows, cols, vals, order = [], [], [], []
    fidx, fvals, forder = [], [], []
    for s in samples:
        d = system.dof_of[s.ids, 0]
        ke = beta * np.einsum("q,qn,qm->nm", s.ds, s.N, s.N)
        gv = np.asarray(g(s.x), float)
        fe = beta * np.einsum("q,qn->n", s.ds * gv, s.N)
        rows.append(np.repeat(d, len(d)))
        cols.append(np.tile(d, len(d)))
        vals.append(ke.ravel())
        order.append(np.full(len(d) ** 2, s.element, np.int64))
        fidx.append(d)
        fvals.append(fe)
        forder.append(np.full(len(d), s.element, np.int64))
    K = system.matrix + _accumulate(rows, cols, vals, order, n)
    f = system.rhs + _accumulate_vector(fidx, fvals, forder, n)
    return SparseSystem(K.tocsr(), f, system.dof_of, system.ncomp)


def default_penalty(h_elem: float, scale: float = 1.0,
                    coefficient: float = 1e3) -> float:
    """Penalty growing like h^-3 so the consistency error stays below the
    discretization error through refinement."""
    return coefficient * scale / h_elem ** 3


# -- solve ----------------------------------------------------------------------

def solve(system: SparseSystem, tol: float = 1e-10) -> np.ndarray:
    """Direct sparse solve with a residual check (CG fallback)."""
    K = system.matrix.tocsc()
    f = system.rhs
    x = spla.spsolve(K, f)
    nf = np.linalg.norm(f)
    res = np.linalg.norm(K @ x - f) / (nf if nf > 0 else 1.0)
    if not np.isfinite(res) or res > tol:
        M = sp.diags(1.0 / system.matrix.diagonal())
        x, info = spla.cg(system.matrix, f, rtol=tol, maxiter=20000, M=M)
        res = np.linalg.norm(system.matrix @ x - f) / (nf if nf > 0 else 1.0)
        if info != 0 or res > tol:
            raise FemError(
                f"linear solve failed: relative residual {res:.3e}")
    return x


def error_norms(coeffs, mesh, table: pb.BasisTable, exact, exact_grad,
                dim=2):
    """(L2, H1 semi) norms of u_h - u over the non-ghost elements."""
    w = table.weights
    l2 = 0.0
    h1 = 0.0
    for e in table.elements:
        ids, N, dN, _ = table.entry(e)
        x, J, _ = geometry_at_points(mesh, ids, N, dN, dim=dim)
        det = np.abs(J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])
        c = np.asarray(coeffs, float)[ids]
        uh = N @ c
        diff = uh - exact(x)
        l2 += float(np.sum(w * det * diff ** 2))
        if exact_grad is not None:
            Jinv = np.linalg.inv(J)
            gh = np.einsum("qnb,qba,n->qa", dN, Jinv, c)
            gdiff = gh - exact_grad(x)
            h1 += float(np.sum(w * det * np.sum(gdiff ** 2, axis=1)))
    return np.sqrt(l2), np.sqrt(h1)


def evaluate_at_vertex(coeffs, mesh, vertex, pspec: pb.PolySpec):
    """Field value at a vertex's parametric position (eta=(0,0) limit)."""
    ids, vals = pb.basis_at_vertex(mesh, vertex, pspec)
    return float(np.asarray(coeffs, float)[np.asarray(ids)] @ vals)


def vertex_position(mesh, vertex, pspec: pb.PolySpec, dim=3):
    """Geometry-map image of a vertex's parametric position."""
    ids, vals = pb.basis_at_vertex(mesh, vertex, pspec)
    return mesh.vertices[np.asarray(ids)][:, :dim].T @ vals


def dump_matrix_market(system: SparseSystem, path):
    from scipy.io import mmwrite
    mmwrite(str(path), system.matrix.tocoo())
