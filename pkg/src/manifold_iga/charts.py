"""Conformal chart maps for ring patches and transitions between them.

A vertex of valence v gets a planar star patch built from v wedges, each the
image of the unit square under the complex power z -> z**(4/v) followed by a
rotation of 2*pi*sector/v.  All maps depend only on connectivity (valence,
sector), never on vertex coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ChartError(ValueError):
    pass


@dataclass(frozen=True)
class ChartMap:
    """Map from a sector's unit square into the star patch of a vertex."""
    valence: int
    sector: int = 0
    ring_depth: int = 1

    def __post_init__(self):
        if self.valence < 3:
            raise ChartError(f"valence must be >= 3, got {self.valence}")
        if not (0 <= self.sector < self.valence):
            raise ChartError(f"sector {self.sector} out of range")


# corner-local coordinates: u = CORNER_OFFSET[k] + CORNER_LINEAR[k] @ eta
# places element corner k at the origin while preserving orientation
CORNER_LINEAR = np.array([
    [[1.0, 0.0], [0.0, 1.0]],
    [[0.0, 1.0], [-1.0, 0.0]],
    [[-1.0, 0.0], [0.0, -1.0]],
    [[0.0, -1.0], [1.0, 0.0]],
])
CORNER_OFFSET = np.array([
    [0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0],
])


def corner_local(eta, corner: int):
    """Unit-square coordinates seen from element corner ``corner``."""
    eta = np.asarray(eta, float)
    return CORNER_OFFSET[corner] + eta @ CORNER_LINEAR[corner].T


def corner_local_inverse(u, corner: int):
    u = np.asarray(u, float)
    return (u - CORNER_OFFSET[corner]) @ np.linalg.inv(
        CORNER_LINEAR[corner]).T


def rotation(angle: float):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def sector_rotation(chart: ChartMap):
    return rotation(2.0 * np.pi * chart.sector / chart.valence)


def _as_complex(pts):
    pts = np.asarray(pts, float)
    return pts[..., 0] + 1j * pts[..., 1]


def _as_points(z):
    return np.stack([z.real, z.imag], axis=-1)


def square_to_wedge(eta, valence: int):
    """Conformal image of unit-square points: zeta = z**(4/v)."""
    z = _as_complex(eta)
    if valence == 4:
        return _as_points(z)
    p = 4.0 / valence
    out = np.zeros_like(z)
    nz = z != 0
    out[nz] = z[nz] ** p
    return _as_points(out)


def wedge_to_square(zeta, valence: int, tol: float = 1e-9):
    """Inverse of :func:`square_to_wedge`; input must lie in the closed wedge
    of angle 2*pi/v with unit-square preimage."""
    z = _as_complex(zeta)
    if valence == 4:
        eta = _as_points(z)
    else:
        ang = np.angle(z)
        lim = 2.0 * np.pi / valence
        bad = (np.abs(z) > 0) & ((ang < -tol) | (ang > lim + tol))
        if np.any(bad):
            b = np.argwhere(np.atleast_1d(bad))[0]
            zz = np.atleast_1d(z)[tuple(b)]
            raise ChartError(
                f"point outside wedge: angle {np.angle(zz):.6f} rad, "
                f"radius {abs(zz):.6f}, valence {valence}")
        p = valence / 4.0
        out = np.zeros_like(z)
        nz = z != 0
        # clamp tiny negative angles onto the wedge edge before inverting
        zc = np.abs(z) * np.exp(1j * np.clip(ang, 0.0, lim))
        out[nz] = zc[nz] ** p
        eta = _as_points(out)
    if np.any(eta < -tol) or np.any(eta > 1 + tol):
        raise ChartError(
            f"wedge point maps outside the unit square: {eta}")
    return eta


def chart_map(eta, chart: ChartMap):
    """xi = R_sector @ square_to_wedge(eta)."""
    zeta = square_to_wedge(eta, chart.valence)
    return zeta @ sector_rotation(chart).T


def _power_derivatives(eta, valence):
    """Complex first/second derivatives of z**(4/v) at unit-square points."""
    z = _as_complex(eta)
    if valence == 4:
        one = np.ones_like(z)
        return one, np.zeros_like(z)
    if np.any(z == 0):
        raise ChartError("singular chart derivative at eta=(0,0) "
                         f"for valence {valence}")
    p = 4.0 / valence
    f1 = p * z ** (p - 1.0)
    f2 = p * (p - 1.0) * z ** (p - 2.0)
    return f1, f2


def chart_jacobian(eta, chart: ChartMap):
    """d(xi)/d(eta), analytic; shape (..., 2, 2)."""
    f1, _ = _power_derivatives(eta, chart.valence)
    J = np.empty(f1.shape + (2, 2))
    J[..., 0, 0] = f1.real
    J[..., 0, 1] = -f1.imag
    J[..., 1, 0] = f1.imag
    J[..., 1, 1] = f1.real
    R = sector_rotation(chart)
    return np.einsum("ab,...bc->...ac", R, J)


def chart_hessian(eta, chart: ChartMap):
    """d2(xi)/d(eta)d(eta), analytic; shape (..., 2, 2, 2).

    Component [a, b, c] is the second derivative of xi_a along eta_b, eta_c.
    Uses the Cauchy-Riemann structure of the holomorphic power map.
    """
    _, f2 = _power_derivatives(eta, chart.valence)
    H = np.empty(f2.shape + (2, 2, 2))
    H[..., 0, 0, 0] = f2.real
    H[..., 0, 0, 1] = -f2.imag
    H[..., 0, 1, 0] = -f2.imag
    H[..., 0, 1, 1] = -f2.real
    H[..., 1, 0, 0] = f2.imag
    H[..., 1, 0, 1] = f2.real
    H[..., 1, 1, 0] = f2.real
    H[..., 1, 1, 1] = -f2.imag
    R = sector_rotation(chart)
    return np.einsum("ad,...dbc->...abc", R, H)


@dataclass(frozen=True)
class Transition:
    """t_ji = S_j o S_i^{-1} restricted to one element shared by two charts.

    Chart i sees the shared element in sector ``sector_i`` from corner
    ``corner_i`` (the index of chart i's center vertex in the element), and
    likewise for chart j.
    """
    chart_i: ChartMap
    chart_j: ChartMap
    corner_i: int
    corner_j: int

    def apply(self, xi_i, tol: float = 1e-9):
        R_i = sector_rotation(self.chart_i)
        zeta = np.asarray(xi_i, float) @ R_i  # R^{-1} = R^T
        u_i = wedge_to_square(zeta, self.chart_i.valence, tol=tol)
        eta = corner_local_inverse(u_i, self.corner_i)
        u_j = corner_local(eta, self.corner_j)
        wedge = square_to_wedge(u_j, self.chart_j.valence)
        return wedge @ sector_rotation(self.chart_j).T

    def inverse(self):
        return Transition(self.chart_j, self.chart_i,
                          self.corner_j, self.corner_i)


def transition_between(mesh, element: int, vertex_i: int, vertex_j: int,
                       ring_depth: int = 1) -> Transition:
    """Transition from the chart of vertex_i to that of vertex_j, both of
    which must be corners of ``element`` (vertex-id based resolution)."""
    from .quadmesh import extract_ring

    quad = [int(u) for u in mesh.quads[element]]
    if vertex_i not in quad or vertex_j not in quad:
        raise ChartError(
            f"element {element} does not join vertices {vertex_i},{vertex_j}")
    ri = extract_ring(mesh, vertex_i, 1)
    rj = extract_ring(mesh, vertex_j, 1)
    ci = ChartMap(ri.valence, ri.sector_of_element[element], ring_depth)
    cj = ChartMap(rj.valence, rj.sector_of_element[element], ring_depth)
    return Transition(ci, cj, quad.index(vertex_i), quad.index(vertex_j))


def transition_apply(xi_i, t: Transition):
    return t.apply(xi_i)
