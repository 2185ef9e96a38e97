"""Shared test utilities: Gauss rules and cross-edge smoothness checks."""

import numpy as np

from manifold_iga import charts as ch
from manifold_iga import pou_basis as pb


def gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    X, Y = np.meshgrid(x, x, indexing="ij")
    WX, WY = np.meshgrid(w, w, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1), (WX * WY).ravel()


class Rule:
    def __init__(self, n):
        self.points, self.weights = gauss01(n)
        self.n = n


def eta_on_edge(edge, t):
    """Points along quad edge ``edge`` (corner edge -> edge+1) at params t."""
    t = np.asarray(t, float)
    z = np.zeros_like(t)
    o = np.ones_like(t)
    if edge == 0:
        return np.stack([t, z], axis=1)
    if edge == 1:
        return np.stack([o, t], axis=1)
    if edge == 2:
        return np.stack([1 - t, o], axis=1)
    return np.stack([z, 1 - t], axis=1)


def shared_edge(mesh, e1, e2):
    """(k1, k2): local edge indices of the edge shared by e1 and e2."""
    q1 = [int(u) for u in mesh.quads[e1]]
    q2 = [int(u) for u in mesh.quads[e2]]
    for k1 in range(4):
        a, b = q1[k1], q1[(k1 + 1) % 4]
        for k2 in range(4):
            if q2[k2] == b and q2[(k2 + 1) % 4] == a:
                return k1, k2
    raise AssertionError(f"elements {e1},{e2} share no edge")


def chart_frame_derivs(mesh, elem, vertex, eta, dN, d2N, ring_depth=1):
    """Pull eta-derivatives into the chart frame of ``vertex``.

    Returns (dN_xi, d2N_xi); the chart frame is shared by all elements in
    the vertex's ring, so both sides of an edge can be compared in it.
    """
    from manifold_iga.quadmesh import extract_ring

    ring = extract_ring(mesh, vertex, 1)
    sector = ring.sector_of_element[elem]
    corner = [int(u) for u in mesh.quads[elem]].index(vertex)
    chart = ch.ChartMap(ring.valence, sector)
    u = ch.corner_local(eta, corner)
    M = ch.CORNER_LINEAR[corner]
    J = ch.chart_jacobian(u, chart) @ M
    H = np.einsum("qaef,eb,fc->qabc", ch.chart_hessian(u, chart), M, M)
    Jinv = np.linalg.inv(J)
    dN_xi = np.einsum("qnb,qba->qna", dN, Jinv)
    rhs = d2N - np.einsum("qna,qabc->qnbc", dN_xi, H)
    d2N_xi = np.einsum("qba,qnbc,qcd->qnad", Jinv, rhs, Jinv)
    return dN_xi, d2N_xi


def cross_edge_mismatch(mesh, e1, e2, bspec, pspec, npts=20, seed=0):
    """Max mismatches (value, grad, hess) of all basis functions across the
    shared edge of two elements, derivatives compared in the chart frame of
    a shared corner vertex."""
    k1, k2 = shared_edge(mesh, e1, e2)
    rng = np.random.default_rng(seed)
    t = np.sort(rng.random(npts) * 0.96 + 0.02)
    eta1 = eta_on_edge(k1, t)
    eta2 = eta_on_edge(k2, 1.0 - t)
    ids1, N1, dN1, d2N1 = pb.evaluate_points(mesh, e1, eta1, bspec, pspec)
    ids2, N2, dN2, d2N2 = pb.evaluate_points(mesh, e2, eta2, bspec, pspec)
    # common chart: a shared corner vertex away from the edge endpoints
    q1 = [int(u) for u in mesh.quads[e1]]
    vtx = q1[k1]  # an endpoint of the shared edge
    f1 = chart_frame_derivs(mesh, e1, vtx, eta1, dN1, d2N1)
    f2 = chart_frame_derivs(mesh, e2, vtx, eta2, dN2, d2N2)

    m1 = {v: i for i, v in enumerate(ids1)}
    m2 = {v: i for i, v in enumerate(ids2)}
    dval = dgrad = dhess = 0.0
    for v in set(ids1) | set(ids2):
        a = N1[:, m1[v]] if v in m1 else np.zeros(npts)
        b = N2[:, m2[v]] if v in m2 else np.zeros(npts)
        dval = max(dval, np.abs(a - b).max())
        ga = f1[0][:, m1[v]] if v in m1 else np.zeros((npts, 2))
        gb = f2[0][:, m2[v]] if v in m2 else np.zeros((npts, 2))
        dgrad = max(dgrad, np.abs(ga - gb).max())
        ha = f1[1][:, m1[v]] if v in m1 else np.zeros((npts, 2, 2))
        hb = f2[1][:, m2[v]] if v in m2 else np.zeros((npts, 2, 2))
        dhess = max(dhess, np.abs(ha - hb).max())
    return dval, dgrad, dhess
