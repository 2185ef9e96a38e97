"""Manifold basis functions: blending quarters, local polynomial fits,
least-squares projection matrices and per-element tabulation.

Every element lies in the overlap of the charts of its four corner vertices.
At a parametric point eta the basis value of ring vertex I is

    N_I(eta) = sum_k w_k(eta) * (p(xi_k)^T A_k)_I

over the four corner charts k, where w_k are the normalised blending
weights, xi_k the chart coordinates of the point and A_k the projection
matrix fitting chart-k ring values with a local polynomial.  Basis values
and their eta-derivatives depend only on mesh connectivity, so tables are
cached by a connectivity signature and shared between congruent elements.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import charts as ch
from .quadmesh import ControlMesh, extract_ring

_SQUARE_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
_ROT90 = [np.array([[1.0, 0.0], [0.0, 1.0]]),
          np.array([[0.0, -1.0], [1.0, 0.0]]),
          np.array([[-1.0, 0.0], [0.0, -1.0]]),
          np.array([[0.0, 1.0], [-1.0, 0.0]])]


class BasisError(ValueError):
    pass


# -- blending -----------------------------------------------------------------

@dataclass(frozen=True)
class BlendingSpec:
    """One quarter of a tensor-product uniform b-spline of the given degree,
    rescaled so b(0) is the peak and b(1) the support end."""
    degree: int = 3

    def __post_init__(self):
        if self.degree not in (1, 2, 3):
            raise BasisError(f"blending degree must be 1..3, "
                             f"got {self.degree}")


def _bspline_halfprofile(x, degree):
    """Centred uniform b-spline B_d and two derivatives at x >= 0."""
    x = np.asarray(x, float)
    B = np.zeros_like(x)
    B1 = np.zeros_like(x)
    B2 = np.zeros_like(x)
    if degree == 1:
        m = x < 1.0
        B[m] = 1.0 - x[m]
        B1[m] = -1.0
    elif degree == 2:
        m = x < 0.5
        B[m] = 0.75 - x[m] ** 2
        B1[m] = -2.0 * x[m]
        B2[m] = -2.0
        m = (x >= 0.5) & (x < 1.5)
        B[m] = 0.5 * (1.5 - x[m]) ** 2
        B1[m] = -(1.5 - x[m])
        B2[m] = 1.0
    else:
        m = x < 1.0
        B[m] = 2.0 / 3.0 - x[m] ** 2 + 0.5 * x[m] ** 3
        B1[m] = -2.0 * x[m] + 1.5 * x[m] ** 2
        B2[m] = -2.0 + 3.0 * x[m]
        m = (x >= 1.0) & (x < 2.0)
        B[m] = (2.0 - x[m]) ** 3 / 6.0
        B1[m] = -0.5 * (2.0 - x[m]) ** 2
        B2[m] = 2.0 - x[m]
    return B, B1, B2


def blending_profile(t, spec: BlendingSpec):
    """b(t), b'(t), b''(t) on [0, 1]; b(1) = 0 with d-1 vanishing
    derivatives, b(0) is the b-spline peak."""
    c = 0.5 * (spec.degree + 1)
    B, B1, B2 = _bspline_halfprofile(c * np.asarray(t, float), spec.degree)
    return B, c * B1, c * c * B2


def blending_raw(eta, spec: BlendingSpec):
    """Unnormalised corner blending w_hat = b(eta1) * b(eta2).

    Returns (value, gradient, hessian) with shapes (...,), (..., 2) and
    (..., 2, 2).
    """
    eta = np.asarray(eta, float)
    bx, bx1, bx2 = blending_profile(eta[..., 0], spec)
    by, by1, by2 = blending_profile(eta[..., 1], spec)
    val = bx * by
    grad = np.stack([bx1 * by, bx * by1], axis=-1)
    hess = np.empty(eta.shape[:-1] + (2, 2))
    hess[..., 0, 0] = bx2 * by
    hess[..., 0, 1] = bx1 * by1
    hess[..., 1, 0] = bx1 * by1
    hess[..., 1, 1] = bx * by2
    return val, grad, hess


def blending_normalized(mesh: ControlMesh, element: int, eta,
                        spec: BlendingSpec):
    """The four normalised corner weights of an element at points eta."""
    eta = np.atleast_2d(np.asarray(eta, float))
    raw = []
    for k in range(4):
        u = ch.corner_local(eta, k)
        raw.append(blending_raw(u, spec)[0])
    raw = np.stack(raw, axis=-1)
    W = raw.sum(axis=-1)
    if np.any(W <= 0):
        raise BasisError("all four corner blendings vanish")
    return raw / W[..., None]


# -- local polynomial bases ---------------------------------------------------

@dataclass(frozen=True)
class PolySpec:
    """Local approximant: tensor-product Lagrange (regular charts) or a
    complete monomial basis; ring_depth picks the fitted vertex set."""
    kind: str = "auto"
    degree: int = 2
    ring_depth: int = 1

    def __post_init__(self):
        if self.kind not in ("auto", "tensor_lagrange", "complete_monomial"):
            raise BasisError(f"unknown polynomial kind {self.kind!r}")
        if self.degree not in (1, 2, 3):
            raise BasisError(f"polynomial degree must be 1..3, "
                             f"got {self.degree}")
        if self.ring_depth not in (1, 2):
            raise BasisError("ring_depth must be 1 or 2")


def complete_exponents(mu):
    return [(d - j, j) for d in range(mu + 1) for j in range(d + 1)]


class ScaledMonomials:
    """Monomials in chart coordinates scaled by the patch radius."""

    def __init__(self, exponents, scale):
        self.exponents = list(exponents)
        self.scale = float(scale)

    @property
    def dim(self):
        return len(self.exponents)

    def eval(self, xi, order=2):
        xi = np.asarray(xi, float)
        X = xi[..., 0] / self.scale
        Y = xi[..., 1] / self.scale
        m = self.dim
        shape = X.shape
        P = np.empty(shape + (m,))
        dP = np.zeros(shape + (m, 2)) if order >= 1 else None
        d2P = np.zeros(shape + (m, 2, 2)) if order >= 2 else None

        def pw(base, e):
            if e < 0:
                return np.zeros_like(base)
            if e == 0:
                return np.ones_like(base)
            return base ** e

        r = self.scale
        for k, (i, j) in enumerate(self.exponents):
            P[..., k] = pw(X, i) * pw(Y, j)
            if order >= 1:
                dP[..., k, 0] = i / r * pw(X, i - 1) * pw(Y, j)
                dP[..., k, 1] = j / r * pw(X, i) * pw(Y, j - 1)
            if order >= 2:
                d2P[..., k, 0, 0] = i * (i - 1) / r ** 2 * pw(X, i - 2) * pw(Y, j)
                d2P[..., k, 1, 1] = j * (j - 1) / r ** 2 * pw(X, i) * pw(Y, j - 2)
                mix = i * j / r ** 2 * pw(X, i - 1) * pw(Y, j - 1)
                d2P[..., k, 0, 1] = mix
                d2P[..., k, 1, 0] = mix
        return P, dP, d2P


class TensorLagrange:
    """Tensor-product cardinal polynomials on a 1D node set (scaled chart
    coordinates); at regular one-ring charts with degree 2 the ring-vertex
    preimages are exactly the nodes, making the projection the identity."""

    def __init__(self, nodes1d, scale):
        self.nodes1d = np.asarray(nodes1d, float)
        self.scale = float(scale)
        k = len(self.nodes1d)
        self._coef = []
        for a in range(k):
            c = np.zeros(k)
            c[a] = 1.0
            # polynomial interpolating the cardinal data
            self._coef.append(np.polyfit(self.nodes1d, c, k - 1))

    @property
    def dim(self):
        return len(self.nodes1d) ** 2

    def _eval1d(self, x):
        k = len(self.nodes1d)
        V = np.empty(x.shape + (k,))
        D1 = np.empty_like(V)
        D2 = np.empty_like(V)
        for a in range(k):
            c = self._coef[a]
            V[..., a] = np.polyval(c, x)
            D1[..., a] = np.polyval(np.polyder(c), x)
            D2[..., a] = np.polyval(np.polyder(c, 2), x)
        return V, D1, D2

    def eval(self, xi, order=2):
        xi = np.asarray(xi, float)
        r = self.scale
        X = xi[..., 0] / r
        Y = xi[..., 1] / r
        VX, DX, DDX = self._eval1d(X)
        VY, DY, DDY = self._eval1d(Y)
        k = len(self.nodes1d)
        shape = X.shape
        P = np.empty(shape + (k * k,))
        dP = np.zeros(shape + (k * k, 2)) if order >= 1 else None
        d2P = np.zeros(shape + (k * k, 2, 2)) if order >= 2 else None
        for a in range(k):
            for b in range(k):
                i = a * k + b
                P[..., i] = VX[..., a] * VY[..., b]
                if order >= 1:
                    dP[..., i, 0] = DX[..., a] * VY[..., b] / r
                    dP[..., i, 1] = VX[..., a] * DY[..., b] / r
                if order >= 2:
                    d2P[..., i, 0, 0] = DDX[..., a] * VY[..., b] / r ** 2
                    d2P[..., i, 1, 1] = VX[..., a] * DDY[..., b] / r ** 2
                    mix = DX[..., a] * DY[..., b] / r ** 2
                    d2P[..., i, 0, 1] = mix
                    d2P[..., i, 1, 0] = mix
        return P, dP, d2P


class PermutedBasis:
    """Reorders the functions of a wrapped basis (used to align cardinal
    Lagrange functions with the ring-vertex ordering, making A an identity
    in the fully regular interpolatory case)."""

    def __init__(self, inner, perm):
        self.inner = inner
        self.perm = np.asarray(perm, np.int64)

    @property
    def dim(self):
        return self.inner.dim

    def eval(self, xi, order=2):
        P, dP, d2P = self.inner.eval(xi, order=order)
        P = P[..., self.perm]
        if dP is not None:
            dP = dP[..., self.perm, :]
        if d2P is not None:
            d2P = d2P[..., self.perm, :, :]
        return P, dP, d2P


_LAGRANGE_NODES = {1: [-1.0, 1.0], 2: [-1.0, 0.0, 1.0],
                   3: [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0]}


def _resolve_poly(valence, n_nodes, pspec: PolySpec, scale):
    kind = pspec.kind
    if kind == "auto":
        kind = "tensor_lagrange" if valence == 4 else "complete_monomial"
    if kind == "tensor_lagrange" and valence != 4:
        kind = "complete_monomial"
    mu = pspec.degree
    if kind == "tensor_lagrange" and (mu + 1) ** 2 > n_nodes:
        kind = "complete_monomial"
    if kind == "complete_monomial":
        dim = (mu + 1) * (mu + 2) // 2
        if dim > n_nodes:
            raise BasisError(
                f"polynomial dimension {dim} exceeds the {n_nodes} ring "
                f"vertices of a valence-{valence} depth-{pspec.ring_depth} "
                "patch")
        return ScaledMonomials(complete_exponents(mu), scale)
    # regular charts: spoke preimages sit at unit radius, so the one-ring
    # vertices coincide with the sealed {-1,0,1} node grid
    return TensorLagrange(_LAGRANGE_NODES[mu], 1.0)


# -- ring-vertex chart preimages ---------------------------------------------

def ring_nodes(mesh: ControlMesh, patch) -> np.ndarray:
    """Chart coordinates of the canonical ring vertices of a patch.

    One-ring vertices sit at the rotated conformal images of the unit-square
    corners; second-ring vertices are placed by continuing the neighbour
    vertex's square fan into the central chart (compose the neighbour chart
    with the transition).
    """
    v = patch.valence
    n = len(patch.vertices)
    nodes = np.zeros((n, 2))
    assigned = np.zeros(n, bool)
    assigned[0] = True
    diag = ch.square_to_wedge([1.0, 1.0], v)
    for s in range(v):
        R = ch.rotation(2.0 * np.pi * s / v)
        nodes[1 + 2 * s] = R @ ch.square_to_wedge([1.0, 0.0], v)
        nodes[2 + 2 * s] = R @ diag
        assigned[1 + 2 * s] = True
        assigned[2 + 2 * s] = True
    vidx = patch.vertex_index
    anchor_pos = {"spoke": np.array([1.0, 0.0]), "diag": np.array([1.0, 1.0])}
    base = {"spoke": 1, "diag": 2}
    for o in patch.outer:
        R90 = _ROT90[(o.offset + base[o.anchor_kind]) % 4]
        Rsec = ch.rotation(2.0 * np.pi * o.sector / v)
        quad = mesh.quads[o.quad]
        for i in range(4):
            vid = int(quad[(o.anchor_corner + i) % 4])
            idx = vidx[vid]
            if assigned[idx]:
                continue
            virt = anchor_pos[o.anchor_kind] + R90 @ _SQUARE_CORNERS[i]
            nodes[idx] = Rsec @ ch.square_to_wedge(virt, v)
            assigned[idx] = True
    if not assigned.all():
        raise BasisError("unplaced ring vertices "
                         f"{np.nonzero(~assigned)[0].tolist()}")
    return nodes


# -- projection matrices -------------------------------------------------------

_COND_LIMIT = 1e12
_chart_cache: dict = {}


@dataclass
class ChartData:
    valence: int
    nodes: np.ndarray        # (n, 2) ring-vertex preimages
    basis: object            # polynomial basis with .eval / .dim
    A: np.ndarray            # (m, n) least-squares projection


def _build_chart_data(mesh, patch, pspec: PolySpec) -> ChartData:
    nodes = ring_nodes(mesh, patch)
    scale = float(np.linalg.norm(nodes, axis=1).max())
    basis = _resolve_poly(patch.valence, len(nodes), pspec, scale)
    if isinstance(basis, TensorLagrange) and basis.dim == len(nodes):
        P0 = basis.eval(nodes, order=0)[0]
        perm = np.argmax(np.abs(P0), axis=1)
        onehot = np.zeros_like(P0)
        onehot[np.arange(len(nodes)), perm] = 1.0
        if (len(set(perm.tolist())) == len(perm)
                and np.abs(P0 - onehot).max() < 1e-9):
            basis = PermutedBasis(basis, perm)
    P = basis.eval(nodes, order=0)[0]
    G = P.T @ P
    cond = np.linalg.cond(G)
    if cond > _COND_LIMIT:
        raise BasisError(
            f"singular projection normal matrix (cond {cond:.2e}) for "
            f"valence {patch.valence}, poly {pspec}")
    A = np.linalg.solve(G, P.T)
    return ChartData(patch.valence, nodes, basis, A)


def chart_data_for(mesh, patch, pspec: PolySpec) -> ChartData:
    key = (patch.signature(), pspec)
    hit = _chart_cache.get(key)
    if hit is None:
        hit = _build_chart_data(mesh, patch, pspec)
        _chart_cache[key] = hit
    return hit


def projection_matrix(valence: int, ring_depth: int,
                      poly: PolySpec) -> np.ndarray:
    """Projection matrix for a patch whose ring neighbours are all regular
    (the canonical precomputable case)."""
    from .fixtures import vertex_star

    star = vertex_star(valence, rings=ring_depth + 1)
    patch = extract_ring(star, 0, ring_depth)
    pspec = PolySpec(poly.kind, poly.degree, ring_depth)
    return chart_data_for(star, patch, pspec).A


# -- per-element evaluation -----------------------------------------------------

def _ring_memo(mesh):
    memo = getattr(mesh, "_ring_memo", None)
    if memo is None:
        memo = {}
        mesh._ring_memo = memo
    return memo


def _corner_charts(mesh, element, pspec: PolySpec):
    memo = _ring_memo(mesh)
    quad = [int(u) for u in mesh.quads[element]]
    out = []
    for k, vtx in enumerate(quad):
        key = (vtx, pspec.ring_depth)
        ring = memo.get(key)
        if ring is None:
            ring = extract_ring(mesh, vtx, pspec.ring_depth)
            memo[key] = ring
        sector = ring.sector_of_element[element]
        out.append((ring, sector, chart_data_for(mesh, ring, pspec)))
    return out


def _element_signature(mesh, element, corner_data, bspec, pspec):
    upos = {}
    pattern = []
    for ring, sector, _ in corner_data:
        loc = []
        for vid in ring.vertices:
            if vid not in upos:
                upos[vid] = len(upos)
            loc.append(upos[vid])
        pattern.append((ring.signature(), sector, tuple(loc)))
    return (bspec, pspec, tuple(pattern))


def _evaluate_element(mesh, element, eta, bspec, pspec, order=2,
                      corner_data=None):
    """Basis values (and eta-derivatives up to ``order``) of all
    contributing vertices at points eta inside one element.

    Returns (contributors, N, dN, d2N); arrays have leading axis len(eta).
    """
    eta = np.atleast_2d(np.asarray(eta, float))
    npts = len(eta)
    if corner_data is None:
        corner_data = _corner_charts(mesh, element, pspec)

    contributors = []
    upos = {}
    locs = []
    for ring, _, _ in corner_data:
        loc = np.empty(len(ring.vertices), np.int64)
        for p, vid in enumerate(ring.vertices):
            if vid not in upos:
                upos[vid] = len(contributors)
                contributors.append(vid)
            loc[p] = upos[vid]
        locs.append(loc)
    nu = len(contributors)

    # corner blendings and the partition-of-unity denominator
    vals, grads, hesss, us = [], [], [], []
    for k in range(4):
        u = ch.corner_local(eta, k)
        us.append(u)
        val, grad_u, hess_u = blending_raw(u, bspec)
        M = ch.CORNER_LINEAR[k]
        grad = grad_u @ M
        hess = np.einsum("ab,...bc,cd->...ad", M.T, hess_u, M)
        vals.append(val)
        grads.append(grad)
        hesss.append(hess)
    W = np.sum(vals, axis=0)
    if np.any(W <= 0.0):
        raise BasisError("vanishing blending denominator inside an element")
    dW = np.sum(grads, axis=0)
    d2W = np.sum(hesss, axis=0)

    N = np.zeros((npts, nu))
    dN = np.zeros((npts, nu, 2)) if order >= 1 else None
    d2N = np.zeros((npts, nu, 2, 2)) if order >= 2 else None

    for k, (ring, sector, cd) in enumerate(corner_data):
        hatw, dhatw, d2hatw = vals[k], grads[k], hesss[k]
        w = hatw / W
        if order >= 1:
            dw = dhatw / W[:, None] - (hatw / W ** 2)[:, None] * dW
        if order >= 2:
            d2w = (d2hatw / W[:, None, None]
                   - (np.einsum("qb,qc->qbc", dhatw, dW)
                      + np.einsum("qb,qc->qbc", dW, dhatw))
                   / (W ** 2)[:, None, None]
                   - (hatw / W ** 2)[:, None, None] * d2W
                   + 2.0 * (hatw / W ** 3)[:, None, None]
                   * np.einsum("qb,qc->qbc", dW, dW))

        u = us[k]
        chart = ch.ChartMap(ring.valence, sector, pspec.ring_depth)
        xi = ch.chart_map(u, chart)
        G, dG_xi, d2G_xi = cd.basis.eval(xi, order=order)
        G = G @ cd.A
        loc = locs[k]
        unique = len(set(loc.tolist())) == len(loc)

        if order == 0:
            contrib = w[:, None] * G
            if unique:
                N[:, loc] += contrib
            else:
                np.add.at(N, (slice(None), loc), contrib)
            continue

        M = ch.CORNER_LINEAR[k]
        # chain rule through the affine corner map and the conformal map
        J_u = ch.chart_jacobian(u, ch.ChartMap(ring.valence, sector))
        J = J_u @ M
        dG_xi = np.einsum("qma,mn->qna", dG_xi, cd.A)
        dG = np.einsum("qna,qab->qnb", dG_xi, J)
        contrib_N = w[:, None] * G
        contrib_dN = dw[:, None, :] * G[:, :, None] + w[:, None, None] * dG

        if order >= 2:
            H_u = ch.chart_hessian(u, ch.ChartMap(ring.valence, sector))
            H = np.einsum("qaef,eb,fc->qabc", H_u, M, M)
            d2G_xi = np.einsum("qmab,mn->qnab", d2G_xi, cd.A)
            d2G = (np.einsum("qnab,qac,qbd->qncd", d2G_xi, J, J)
                   + np.einsum("qna,qabc->qnbc", dG_xi, H))
            contrib_d2N = (d2w[:, None] * G[:, :, None, None]
                           + np.einsum("qb,qnc->qnbc", dw, dG)
                           + np.einsum("qnb,qc->qnbc", dG, dw)
                           + w[:, None, None, None] * d2G)

        if unique:
            N[:, loc] += contrib_N
            dN[:, loc] += contrib_dN
            if order >= 2:
                d2N[:, loc] += contrib_d2N
        else:
            np.add.at(N, (slice(None), loc), contrib_N)
            np.add.at(dN, (slice(None), loc), contrib_dN)
            if order >= 2:
                np.add.at(d2N, (slice(None), loc), contrib_d2N)

    return contributors, N, dN, d2N


def basis_at_vertex(mesh, vertex, pspec: PolySpec):
    """Basis values at a vertex's parametric location (the eta=(0,0) limit
    of any element cornered there; chart derivatives are singular but the
    values are well defined: the corner blending is exactly one)."""
    memo = _ring_memo(mesh)
    key = (int(vertex), pspec.ring_depth)
    ring = memo.get(key)
    if ring is None:
        ring = extract_ring(mesh, int(vertex), pspec.ring_depth)
        memo[key] = ring
    cd = chart_data_for(mesh, ring, pspec)
    P = cd.basis.eval(np.zeros((1, 2)), order=0)[0]
    vals = (P @ cd.A)[0]
    return list(ring.vertices), vals


# -- tabulation ----------------------------------------------------------------

class BasisTable:
    """Per-element basis values and first/second parametric derivatives at
    fixed quadrature points, keyed by contributing vertex ids."""

    def __init__(self, mesh, bspec, pspec, points, weights):
        self.mesh = mesh
        self.blending = bspec
        self.poly = pspec
        self.points = np.asarray(points, float)
        self.weights = np.asarray(weights, float)
        self.elements = []      # element ids in tabulation order
        self._entries = {}      # element -> (ids, N, dN, d2N)

    def add(self, element, ids, N, dN, d2N):
        self.elements.append(element)
        self._entries[element] = (np.asarray(ids, np.int64), N, dN, d2N)

    def entry(self, element):
        return self._entries[element]

    def __contains__(self, element):
        return element in self._entries

    def __len__(self):
        return len(self.elements)


def tabulate_element(mesh, element, bspec: BlendingSpec, pspec: PolySpec,
                     quad_points) -> tuple:
    """(ids, N, dN, d2N) for one element at the given points."""
    ids, N, dN, d2N = _evaluate_element(mesh, element, quad_points,
                                        bspec, pspec, order=2)
    return np.asarray(ids, np.int64), N, dN, d2N


_table_cache: dict = {}


def tabulate_mesh(mesh, bspec: BlendingSpec, pspec: PolySpec, quad_rule,
                  parallel: int | None = None) -> BasisTable:
    """Tabulate every non-ghost element.

    Basis arrays are shared between elements with identical connectivity
    signatures, so the result depends only on the mesh connectivity, never
    on vertex coordinates, and is identical for serial and parallel runs.
    """
    pts = np.asarray(quad_rule.points, float)
    wts = np.asarray(quad_rule.weights, float)
    rule_key = hashlib.sha256(pts.tobytes() + wts.tobytes()).hexdigest()

    elems = [int(e) for e in mesh.core_quads()]
    sigs = {}
    jobs = {}
    corner_data = {}
    for e in elems:
        cdata = _corner_charts(mesh, e, pspec)
        corner_data[e] = cdata
        sig = (_element_signature(mesh, e, cdata, bspec, pspec), rule_key)
        sigs[e] = sig
        if sig not in _table_cache and sig not in jobs:
            jobs[sig] = e

    def run(sig_elem):
        sig, e = sig_elem
        ids, N, dN, d2N = _evaluate_element(mesh, e, pts, bspec, pspec,
                                            order=2,
                                            corner_data=corner_data[e])
        return sig, (N, dN, d2N)

    items = sorted(jobs.items(), key=lambda kv: kv[1])
    if parallel and parallel > 1 and len(items) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=parallel) as ex:
            results = list(ex.map(run, [(s, e) for s, e in items]))
    else:
        results = [run((s, e)) for s, e in items]
    for sig, arrays in results:
        _table_cache[sig] = arrays

    table = BasisTable(mesh, bspec, pspec, pts, wts)
    for e in elems:
        N, dN, d2N = _table_cache[sigs[e]]
        ids = _contributor_ids(mesh, e, corner_data[e])
        table.add(e, ids, N, dN, d2N)
    return table


def _contributor_ids(mesh, element, corner_data):
    seen = {}
    ids = []
    for ring, _, _ in corner_data:
        for vid in ring.vertices:
            if vid not in seen:
                seen[vid] = True
                ids.append(vid)
    return np.asarray(ids, np.int64)


def evaluate_field(coeffs, table: BasisTable, element: int,
                   q_index=None):
    """Field value and eta-derivatives from per-vertex coefficients.

    coeffs has shape (n_vertices,) or (n_vertices, ncomp).  Returns
    (value, grad, hess) at one quadrature point or at all of them.
    """
    ids, N, dN, d2N = table.entry(element)
    coeffs = np.asarray(coeffs, float)
    if np.any(ids >= len(coeffs)):
        raise BasisError("coefficient array does not cover all "
                         "contributing vertices")
    c = coeffs[ids]
    if q_index is not None:
        N, dN, d2N = N[q_index:q_index + 1], dN[q_index:q_index + 1], \
            d2N[q_index:q_index + 1]
    val = np.einsum("qn,n...->q...", N, c)
    grad = np.einsum("qnb,n...->q...b", dN, c)
    hess = np.einsum("qnbc,n...->q...bc", d2N, c)
    if q_index is not None:
        return val[0], grad[0], hess[0]
    return val, grad, hess


def evaluate_points(mesh, element, eta, bspec, pspec, order=2):
    """Uncached basis evaluation at arbitrary parametric points."""
    return _evaluate_element(mesh, element, eta, bspec, pspec, order=order)


# -- table export ---------------------------------------------------------------

def mesh_hash(mesh: ControlMesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices).tobytes())
    h.update(np.ascontiguousarray(mesh.quads).tobytes())
    return h.hexdigest()


def dump_table_json(table: BasisTable, path):
    """Documented dump: header then per-element records in fixed order
    (vertex ids, values, first then second derivatives, C order)."""
    doc = {
        "mesh_hash": mesh_hash(table.mesh),
        "blending_degree": table.blending.degree,
        "poly": {"kind": table.poly.kind, "degree": table.poly.degree,
                 "ring_depth": table.poly.ring_depth},
        "quad_points": table.points.tolist(),
        "quad_weights": table.weights.tolist(),
        "elements": [],
    }
    for e in table.elements:
        ids, N, dN, d2N = table.entry(e)
        doc["elements"].append({
            "element": int(e),
            "vertices": ids.tolist(),
            "values": N.tolist(),
            "gradients": dN.tolist(),
            "hessians": d2N.tolist(),
        })
    with open(path, "w") as f:
        json.dump(doc, f)


def dump_table_npz(table: BasisTable, path):
    arrays = {
        "mesh_hash": np.frombuffer(
            bytes.fromhex(mesh_hash(table.mesh)), dtype=np.uint8),
        "points": table.points,
        "weights": table.weights,
        "elements": np.asarray(table.elements, np.int64),
    }
    for e in table.elements:
        ids, N, dN, d2N = table.entry(e)
        arrays[f"ids_{e}"] = ids
        arrays[f"N_{e}"] = N
        arrays[f"dN_{e}"] = dN
        arrays[f"d2N_{e}"] = d2N
    np.savez_compressed(path, **arrays)


# -- one-dimensional variant -----------------------------------------------------

def curve_point_1d(values, element: int, s, spec: BlendingSpec = None):
    """Smooth curve interpolating a 1D control polygon.

    Element ``i`` spans control vertices i..i+1; the two vertex charts
    blend quadratic fits through three consecutive vertices, so four basis
    functions are non-zero per element.  Needs 1 <= i <= n-3.
    """
    spec = spec or BlendingSpec(3)
    values = np.asarray(values, float)
    n = len(values)
    i = element
    if not (1 <= i <= n - 3):
        raise BasisError("element needs a full stencil i-1..i+2")
    s = np.asarray(s, float)
    bl, _, _ = blending_profile(s, spec)
    br, _, _ = blending_profile(1.0 - s, spec)
    W = bl + br

    def lagrange(xi, c):
        return (c[0] * 0.5 * xi * (xi - 1.0)
                + c[1] * (1.0 - xi ** 2)
                + c[2] * 0.5 * xi * (xi + 1.0))

    f_left = lagrange(s, values[i - 1:i + 2])        # chart at vertex i
    f_right = lagrange(s - 1.0, values[i:i + 3])     # chart at vertex i+1
    return (bl * f_left + br * f_right) / W
