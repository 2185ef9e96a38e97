import numpy as np
import pytest

from manifold_iga import fixtures, pou_basis as pb
from manifold_iga.quadmesh import extract_ring, reflect_ghosts

rng = np.random.default_rng(7)

CUBIC = pb.BlendingSpec(3)


def gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    X, Y = np.meshgrid(x, x, indexing="ij")
    WX, WY = np.meshgrid(w, w, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    return pts, (WX * WY).ravel()


class Rule:
    def __init__(self, n):
        self.points, self.weights = gauss01(n)


# -- blending -------------------------------------------------------------------

def test_cubic_peak_value():
    # one quarter of a tensor-product cubic b-spline: peak (2/3)^2 = 4/9
    val, _, _ = pb.blending_raw([0.0, 0.0], CUBIC)
    assert np.isclose(val, 4.0 / 9.0, atol=1e-15)


def test_blending_vanishes_on_far_edges():
    for d in (1, 2, 3):
        spec = pb.BlendingSpec(d)
        for t in np.linspace(0, 1, 7):
            v1, _, _ = pb.blending_raw([1.0, t], spec)
            v2, _, _ = pb.blending_raw([t, 1.0], spec)
            assert v1 == 0.0 and v2 == 0.0


def test_cubic_contact_order_at_support_end():
    t = np.linspace(0, 1, 9)
    val, grad, hess = pb.blending_raw(np.stack([np.ones_like(t), t], 1), CUBIC)
    assert np.all(val == 0)
    assert np.abs(grad).max() == 0.0
    assert np.abs(hess).max() == 0.0


def test_blending_profile_derivatives_fd():
    for d in (1, 2, 3):
        spec = pb.BlendingSpec(d)
        t = rng.random(100) * 0.96 + 0.02
        b, b1, b2 = pb.blending_profile(t, spec)
        h = 1e-6
        bp = pb.blending_profile(t + h, spec)[0]
        bm = pb.blending_profile(t - h, spec)[0]
        assert np.abs((bp - bm) / (2 * h) - b1).max() < 1e-8
        if d >= 2:
            assert np.abs((bp - 2 * b + bm) / h ** 2 - b2).max() < 1e-3


def test_normalized_weights_center_and_corner():
    mesh = fixtures.structured_square(4)
    elem = 5
    w = pb.blending_normalized(mesh, elem, [0.5, 0.5], CUBIC)
    assert np.allclose(w, 0.25, atol=1e-14)
    w = pb.blending_normalized(mesh, elem, [0.0, 0.0], CUBIC)
    assert np.allclose(w, [1.0, 0.0, 0.0, 0.0], atol=1e-15)
    pts = rng.random((200, 2))
    w = pb.blending_normalized(mesh, elem, pts, CUBIC)
    assert np.abs(w.sum(axis=1) - 1.0).max() < 1e-14
    assert w.min() >= 0


# -- projection matrices -----------------------------------------------------------

def test_projection_identity_regular_lagrange():
    A = pb.projection_matrix(4, 1, pb.PolySpec("tensor_lagrange", 2, 1))
    assert A.shape == (9, 9)
    assert np.abs(A - np.eye(9)).max() < 1e-12


def test_projection_v3_complete_quadratic():
    A = pb.projection_matrix(3, 1, pb.PolySpec("auto", 2, 1))
    assert A.shape == (6, 7)
    # reproduce each of the 6 monomials sampled at the ring nodes
    star = fixtures.vertex_star(3, rings=2)
    patch = extract_ring(star, 0, 1)
    cd = pb.chart_data_for(star, patch, pb.PolySpec("auto", 2, 1))
    P = cd.basis.eval(cd.nodes, order=0)[0]   # (7, 6) samples
    coef = cd.A @ P
    assert np.abs(coef - np.eye(6)).max() < 1e-10


def test_projection_matches_lstsq_oracle():
    for v in range(3, 9):
        for depth in (1, 2):
            spec = pb.PolySpec("auto", 2, depth)
            star = fixtures.vertex_star(v, rings=depth + 1)
            patch = extract_ring(star, 0, depth)
            cd = pb.chart_data_for(star, patch, spec)
            P = cd.basis.eval(cd.nodes, order=0)[0]
            A_oracle = np.linalg.lstsq(P, np.eye(len(cd.nodes)),
                                       rcond=None)[0]
            assert np.abs(cd.A - A_oracle).max() < 1e-10


def test_projection_reproduces_constants():
    for v in (3, 5, 6):
        for mu in (1, 2):
            spec = pb.PolySpec("auto", mu, 1)
            star = fixtures.vertex_star(v, rings=2)
            patch = extract_ring(star, 0, 1)
            cd = pb.chart_data_for(star, patch, spec)
            alpha = cd.A @ np.ones(cd.A.shape[1])
            # fitted polynomial must be exactly 1 at arbitrary points
            xi = rng.random((40, 2)) * 0.5
            vals = cd.basis.eval(xi, order=0)[0] @ alpha
            assert np.abs(vals - 1.0).max() < 1e-12


def test_poly_dimension_guard():
    with pytest.raises(pb.BasisError, match="dimension"):
        pb.projection_matrix(4, 1, pb.PolySpec("auto", 3, 1))


# -- element evaluation ----------------------------------------------------------

def _pu_checks(mesh, elems, pspec, bspec, tol_val=1e-12, tol_grad=1e-9):
    pts = gauss01(9)[0]
    for e in elems:
        ids, N, dN, d2N = pb.tabulate_element(mesh, e, bspec, pspec, pts)
        assert np.abs(N.sum(axis=1) - 1.0).max() < tol_val
        assert np.abs(dN.sum(axis=1)).max() < tol_grad
        assert np.abs(d2N.sum(axis=1)).max() < 1e-7


def test_partition_of_unity_regular():
    mesh = fixtures.structured_square(6)
    mesh = reflect_ghosts(mesh, 1)
    inner = [e for e in mesh.core_quads()][:8]
    _pu_checks(mesh, inner, pb.PolySpec("auto", 2, 1), CUBIC)


@pytest.mark.parametrize("valence", [3, 5, 6, 8])
def test_partition_of_unity_star(valence):
    mesh = fixtures.vertex_star(valence, rings=3)
    ring = extract_ring(mesh, 0, 1)
    _pu_checks(mesh, ring.elements, pb.PolySpec("auto", 2, 1), CUBIC)


def test_contributing_vertices_regular_and_v5():
    mesh = fixtures.structured_square(6)
    mesh = reflect_ghosts(mesh, 1)
    # fully interior element of a regular mesh: 4 charts x 9 vertices = 16
    e = [q for q in mesh.core_quads()
         if all(not mesh.vertex_boundary[v] for v in mesh.quads[q])][0]
    ids, _, _, _ = pb.tabulate_element(mesh, e, CUBIC,
                                       pb.PolySpec("auto", 2, 1),
                                       np.array([[0.5, 0.5]]))
    assert len(ids) == 16
    # element cornered at a valence-5 vertex depends on 18 vertices
    star = fixtures.vertex_star(5, rings=3)
    ring = extract_ring(star, 0, 1)
    ids, _, _, _ = pb.tabulate_element(star, ring.elements[0], CUBIC,
                                       pb.PolySpec("auto", 2, 1),
                                       np.array([[0.5, 0.5]]))
    assert len(ids) == 18


def test_gradients_match_finite_differences():
    star = fixtures.vertex_star(5, rings=3)
    ring = extract_ring(star, 0, 1)
    e = ring.elements[0]
    pspec = pb.PolySpec("auto", 2, 1)
    pts = rng.random((12, 2)) * 0.9 + 0.05
    ids, N, dN, d2N = pb.tabulate_element(star, e, CUBIC, pspec, pts)
    h = 1e-6
    for b in range(2):
        dp = pts.copy()
        dm = pts.copy()
        dp[:, b] += h
        dm[:, b] -= h
        _, Np, _, _ = pb.tabulate_element(star, e, CUBIC, pspec, dp)
        _, Nm, _, _ = pb.tabulate_element(star, e, CUBIC, pspec, dm)
        fd = (Np - Nm) / (2 * h)
        assert np.abs(fd - dN[:, :, b]).max() < 1e-6
        _, _, dNp, _ = pb.tabulate_element(star, e, CUBIC, pspec, dp)
        _, _, dNm, _ = pb.tabulate_element(star, e, CUBIC, pspec, dm)
        fd2 = (dNp - dNm) / (2 * h)
        assert np.abs(fd2 - d2N[:, :, :, b]).max() < 1e-4


def test_biquadratic_reproduction_regular():
    mesh = fixtures.structured_square(6)
    mesh = reflect_ghosts(mesh, 1)
    pspec = pb.PolySpec("auto", 2, 1)
    table = pb.tabulate_mesh(mesh, CUBIC, pspec, Rule(5))

    def q(x, y):
        return 1.0 + 2 * x - y + 0.5 * x * x - x * y + 0.25 * y * y

    coeffs = q(mesh.vertices[:, 0], mesh.vertices[:, 1])
    for e in list(mesh.core_quads())[:6]:
        val, _, _ = pb.evaluate_field(coeffs, table, e)
        ids, N, _, _ = table.entry(e)
        x = np.einsum("qn,n->q", N, mesh.vertices[ids, 0])
        y = np.einsum("qn,n->q", N, mesh.vertices[ids, 1])
        assert np.abs(val - q(x, y)).max() < 1e-10


def test_constant_field_reproduction():
    star = fixtures.vertex_star(6, rings=3)
    ring = extract_ring(star, 0, 1)
    pspec = pb.PolySpec("auto", 2, 1)
    pts = rng.random((30, 2)) * 0.96 + 0.02
    ids, N, dN, _ = pb.tabulate_element(star, ring.elements[2], CUBIC,
                                        pspec, pts)
    coeffs = np.ones(star.n_vertices)
    c = coeffs[ids]
    assert np.abs(N @ c - 1.0).max() < 1e-12
    assert np.abs(np.einsum("qnb,n->qb", dN, c)).max() < 1e-9


def test_tables_depend_only_on_connectivity():
    mesh1, _ = fixtures.unstructured_square(8)
    mesh1 = reflect_ghosts(mesh1, 1)
    # same connectivity, randomised geometry
    verts = np.array(mesh1.vertices)
    verts[:, :2] += rng.normal(scale=0.01, size=(len(verts), 2))
    mesh2 = mesh1.with_vertices(verts)
    pspec = pb.PolySpec("auto", 2, 1)
    t1 = pb.tabulate_mesh(mesh1, CUBIC, pspec, Rule(3))
    t2 = pb.tabulate_mesh(mesh2, CUBIC, pspec, Rule(3))
    for e in mesh1.core_quads():
        ids1, N1, dN1, d2N1 = t1.entry(int(e))
        ids2, N2, dN2, d2N2 = t2.entry(int(e))
        assert np.array_equal(ids1, ids2)
        assert N1 is N2 or np.array_equal(N1, N2)
        assert dN1 is dN2 or np.array_equal(dN1, dN2)


def test_parallel_tabulation_identical():
    mesh, _ = fixtures.unstructured_square(8)
    mesh = reflect_ghosts(mesh, 1)
    pspec = pb.PolySpec("auto", 2, 1)
    pb._table_cache.clear()
    t1 = pb.tabulate_mesh(mesh, CUBIC, pspec, Rule(4))
    pb._table_cache.clear()
    t2 = pb.tabulate_mesh(mesh, CUBIC, pspec, Rule(4), parallel=4)
    for e in mesh.core_quads():
        _, N1, dN1, d2N1 = t1.entry(int(e))
        _, N2, dN2, d2N2 = t2.entry(int(e))
        assert np.array_equal(N1, N2)
        assert np.array_equal(dN1, dN2)
        assert np.array_equal(d2N1, d2N2)


def test_partition_of_unity_two_ring():
    mesh, _ = fixtures.unstructured_square(8)
    mesh = reflect_ghosts(mesh, 2)
    pspec = pb.PolySpec("auto", 2, 2)
    elems = list(mesh.core_quads())[:10]
    _pu_checks(mesh, elems, pspec, CUBIC)


def test_two_ring_contributors():
    mesh = fixtures.structured_square(8)
    mesh = reflect_ghosts(mesh, 2)
    inner = [q for q in mesh.core_quads()
             if all(not mesh.vertex_boundary[v] for v in mesh.quads[q])]
    e = inner[len(inner) // 2]
    ids, _, _, _ = pb.tabulate_element(mesh, e, CUBIC,
                                       pb.PolySpec("auto", 2, 2),
                                       np.array([[0.5, 0.5]]))
    # union of four 25-vertex two-rings on a regular grid: 6x6 block
    assert len(ids) == 36


def test_vertex_evaluation():
    mesh = fixtures.structured_square(6)
    mesh = reflect_ghosts(mesh, 1)
    pspec = pb.PolySpec("auto", 2, 1)
    # interior vertex: constant coefficients give exactly 1
    v = [u for u in range(mesh.n_vertices)
         if not mesh.vertex_ghost[u] and not mesh.vertex_boundary[u]][0]
    ids, vals = pb.basis_at_vertex(mesh, v, pspec)
    assert np.isclose(vals.sum(), 1.0, atol=1e-12)
    # biquadratic reproduction pins the vertex value
    def q(x, y):
        return 0.3 + x - 2 * y + x * x + 0.5 * x * y + y * y
    coeffs = q(mesh.vertices[:, 0], mesh.vertices[:, 1])
    got = coeffs[np.asarray(ids)] @ vals
    assert np.isclose(got, q(*mesh.vertices[v, :2]), atol=1e-10)


def test_curve_1d_interpolates_vertices():
    values = np.array([0.0, 1.0, -0.5, 2.0, 0.7, 0.1])
    for i in (1, 2, 3):
        assert np.isclose(pb.curve_point_1d(values, i, 0.0), values[i],
                          atol=1e-14)
        assert np.isclose(pb.curve_point_1d(values, i, 1.0), values[i + 1],
                          atol=1e-14)


def test_table_dumps(tmp_path):
    mesh = fixtures.structured_square(3)
    mesh = reflect_ghosts(mesh, 1)
    table = pb.tabulate_mesh(mesh, CUBIC, pb.PolySpec("auto", 2, 1), Rule(2))
    pb.dump_table_json(table, tmp_path / "t.json")
    pb.dump_table_npz(table, tmp_path / "t.npz")
    import json
    doc = json.loads((tmp_path / "t.json").read_text())
    assert doc["blending_degree"] == 3
    assert len(doc["elements"]) == 9
