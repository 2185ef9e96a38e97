"""Built-in control-mesh generators for the bundled studies and benchmarks.

The unstructured connectivities are pinned here (valence censuses are
asserted in tests); coordinates are relaxed numerically, so error constants
of published studies are not reproduced exactly, only their rates.
"""

from __future__ import annotations

import numpy as np

from .quadmesh import ControlMesh, MeshError


def _dedup_builder():
    coords, index = [], {}

    def add(p):
        key = tuple(np.round(np.asarray(p, float), 12))
        if key not in index:
            index[key] = len(coords)
            coords.append(np.asarray(p, float))
        return index[key]

    return coords, add


def structured_square(n: int) -> ControlMesh:
    """n x n element grid on the unit square."""
    if n < 1:
        raise MeshError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    verts = [(x, y, 0.0) for y in xs for x in xs]
    vid = lambda i, j: j * (n + 1) + i
    quads = [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
             for j in range(n) for i in range(n)]
    return ControlMesh(np.asarray(verts), np.asarray(quads))


def rotate_edge(quads, a: int, b: int, diagonal: str = "ec"):
    """Rotate the interior edge (a, b) shared by two quads.

    Replaces the pair by the two quads obtained from the other diagonal of
    their union hexagon.  Endpoints a, b lose one edge (valence-3 on a grid),
    two hexagon vertices gain one (valence-5).
    """
    quads = [list(q) for q in quads]
    q_ab = q_ba = None
    for qi, q in enumerate(quads):
        for k in range(4):
            if q[k] == a and q[(k + 1) % 4] == b:
                q_ab = (qi, k)
            if q[k] == b and q[(k + 1) % 4] == a:
                q_ba = (qi, k)
    if q_ab is None or q_ba is None:
        raise MeshError(f"edge ({a}, {b}) is not interior")
    qi1, k1 = q_ab
    qi2, k2 = q_ba
    Q1 = quads[qi1][k1:] + quads[qi1][:k1]   # [a, b, c, d]
    Q2 = quads[qi2][k2:] + quads[qi2][:k2]   # [b, a, e, f]
    _, _, c, d = Q1
    _, _, e, f = Q2
    if diagonal == "ec":
        new1, new2 = [e, f, b, c], [c, d, a, e]
    elif diagonal == "fd":
        new1, new2 = [f, b, c, d], [d, a, e, f]
    else:
        raise MeshError(f"unknown diagonal {diagonal!r}")
    out = [q for qi, q in enumerate(quads) if qi not in (qi1, qi2)]
    out.extend([new1, new2])
    return out


def laplacian_smooth(verts, quads, fixed, iterations=10, weight=0.5,
                     project=None):
    """Edge-neighbour averaging of non-fixed vertices, optionally projected
    back onto a surface after each sweep."""
    verts = np.array(verts, float)
    nbrs = [set() for _ in range(len(verts))]
    for q in quads:
        for k in range(4):
            a, b = q[k], q[(k + 1) % 4]
            nbrs[a].add(b)
            nbrs[b].add(a)
    fixed = set(fixed)
    for _ in range(iterations):
        new = verts.copy()
        for v in range(len(verts)):
            if v in fixed or not nbrs[v]:
                continue
            avg = verts[sorted(nbrs[v])].mean(axis=0)
            new[v] = (1.0 - weight) * verts[v] + weight * avg
        if project is not None:
            for v in range(len(verts)):
                if v not in fixed:
                    new[v] = project(new[v])
        verts = new
    return verts


def unstructured_square(n: int = 8):
    """Unit-square mesh with four valence-3 and four valence-5 interior
    vertices, mirror symmetric in x.  Returns (mesh, tags) where tags holds
    representative vertex ids of valences 3, 4 and 5 plus the EV census.
    """
    if n < 8 or n % 2:
        raise MeshError("unstructured square needs even n >= 8")
    m = structured_square(n)
    vid = lambda i, j: j * (n + 1) + i
    i0, i1, j0 = n // 4, n - n // 4, n // 2
    quads = [list(q) for q in np.asarray(m.quads)]
    quads = rotate_edge(quads, vid(i0, j0), vid(i0 + 1, j0), "ec")
    quads = rotate_edge(quads, vid(i1, j0), vid(i1 - 1, j0), "fd")
    boundary = [vid(i, j) for j in range(n + 1) for i in range(n + 1)
                if i in (0, n) or j in (0, n)]
    verts = laplacian_smooth(m.vertices, quads, boundary, iterations=12)
    mesh = ControlMesh(verts, np.asarray(quads))
    tags = {
        "ev3": vid(i0, j0),
        "ev5": vid(i0 + 1, j0 + 1),
        "v4": vid(i0 + 1, j0 - 1),
        "census3": [vid(i0, j0), vid(i0 + 1, j0),
                    vid(i1, j0), vid(i1 - 1, j0)],
        "census5": [vid(i0 + 1, j0 + 1), vid(i0, j0 - 1),
                    vid(i1 - 1, j0 + 1), vid(i1, j0 - 1)],
    }
    return mesh, tags


def circle_disk(k: int = 4, radial: int | None = None, radius: float = 0.5):
    """Disk mesh of radius ``radius``: a k x k central square block and four
    annular blocks of ``radial`` rows out to the circle.  Four valence-3
    vertices sit at the central block corners."""
    if k < 2 or k % 2:
        raise MeshError("circle disk needs even k >= 2")
    radial = max(1, k // 2) if radial is None else radial
    a = 0.5 * radius
    coords, add = _dedup_builder()
    quads = []

    def lin(i):
        return -a + 2.0 * a * i / k

    def grid_quads(ids):
        # emits CCW quads when the i-axis cross j-axis points in +z
        for j in range(len(ids) - 1):
            for i in range(len(ids[0]) - 1):
                quads.append([ids[j][i], ids[j][i + 1],
                              ids[j + 1][i + 1], ids[j + 1][i]])

    # central block, i along +x and j along +y
    ids = [[add((lin(i), lin(j), 0.0)) for i in range(k + 1)]
           for j in range(k + 1)]
    grid_quads(ids)

    # four annular blocks; block b faces direction b * pi/2,
    # i runs radially outward and j counter-clockwise
    for b in range(4):
        rows = []
        for j in range(k + 1):
            g = (b * k + j) % (4 * k)  # canonical arc position
            th = -np.pi / 4 + (np.pi / 2) * g / k
            arc = radius * np.array([np.cos(th), np.sin(th), 0.0])
            u = lin(j)
            if b == 0:
                inner = np.array([a, u, 0.0])
            elif b == 1:
                inner = np.array([-u, a, 0.0])
            elif b == 2:
                inner = np.array([-a, -u, 0.0])
            else:
                inner = np.array([u, -a, 0.0])
            rows.append([add(inner + (arc - inner) * (t / radial))
                         for t in range(radial + 1)])
        grid_quads(rows)

    return ControlMesh(np.asarray(coords), np.asarray(quads))


def cylinder(n_around: int = 8, n_axial: int = 4, radius: float = 300.0,
             length: float = 600.0, unstructured: bool = False):
    """Closed circular tube, open ends at z = 0 and z = length."""
    if n_around < 4 or n_axial < 2:
        raise MeshError("cylinder needs n_around >= 4 and n_axial >= 2")
    nv = n_around * (n_axial + 1)
    verts = np.zeros((nv, 3))
    vid = lambda i, j: j * n_around + (i % n_around)
    for j in range(n_axial + 1):
        z = length * j / n_axial
        for i in range(n_around):
            th = 2 * np.pi * i / n_around
            verts[vid(i, j)] = (radius * np.cos(th), radius * np.sin(th), z)
    quads = [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
             for j in range(n_axial) for i in range(n_around)]
    if unstructured:
        quads = rotate_edge(quads, vid(1, n_axial // 2),
                            vid(2, n_axial // 2), "ec")

        def project(p):
            r = np.hypot(p[0], p[1])
            return np.array([p[0] * radius / r, p[1] * radius / r, p[2]])

        rim = [vid(i, j) for i in range(n_around) for j in (0, n_axial)]
        verts = laplacian_smooth(verts, quads, rim, iterations=8,
                                 project=project)
    return ControlMesh(verts, np.asarray(quads))


def hemisphere(k: int = 4, radius: float = 10.0, unstructured: bool = False):
    """Cubed-sphere upper hemisphere with a free equator rim.

    Valence-3 vertices at the four projected cube corners; with
    ``unstructured=True`` an edge rotation on the cap adds a 3/5 pair so the
    valence census spans 3..5.
    """
    if k < 4 or k % 2:
        raise MeshError("hemisphere needs even k >= 4")
    coords, add = _dedup_builder()
    quads = []

    def proj(p):
        p = np.asarray(p, float)
        return radius * p / np.linalg.norm(p)

    def grid_quads(ids):
        rows = len(ids)
        for jj in range(rows - 1):
            for ii in range(len(ids[0]) - 1):
                quads.append([ids[jj][ii], ids[jj][ii + 1],
                              ids[jj + 1][ii + 1], ids[jj + 1][ii]])

    us = np.linspace(-1.0, 1.0, k + 1)
    zs = np.linspace(0.0, 1.0, k // 2 + 1)

    # cap (z = 1 face), u x v -> +z
    ids = [[add(proj((u, v, 1.0))) for u in us] for v in us]
    cap_ids = ids
    grid_quads(ids)
    # side faces, horizontal h then vertical z, h x z -> outward
    sides = [
        lambda h, z: (1.0, h, z),     # x = +1
        lambda h, z: (-h, 1.0, z),    # y = +1
        lambda h, z: (-1.0, -h, z),   # x = -1
        lambda h, z: (h, -1.0, z),    # y = -1
    ]
    for face in sides:
        ids = [[add(proj(face(h, z))) for h in us] for z in zs]
        grid_quads(ids)

    verts = np.asarray(coords)
    if unstructured:
        c = k // 2
        a = cap_ids[c][c - 1]
        b = cap_ids[c][c]
        quads = rotate_edge(quads, a, b, "ec")
        rim = [i for i, p in enumerate(verts) if abs(p[2]) < 1e-9]

        def project(p):
            q = radius * p / np.linalg.norm(p)
            return q

        verts = laplacian_smooth(verts, quads, rim, iterations=8,
                                 project=project)
    return ControlMesh(verts, np.asarray(quads))


def vertex_star(valence: int, rings: int = 3) -> ControlMesh:
    """Planar star mesh: one central vertex of the given valence surrounded
    by ``rings`` structured layers per sector.  All other interior vertices
    are regular; used to exercise charts for arbitrary valences."""
    if valence < 3:
        raise MeshError("valence must be >= 3")
    m = rings
    coords, add = _dedup_builder()
    spokes = [np.array([np.cos(2 * np.pi * s / valence),
                        np.sin(2 * np.pi * s / valence), 0.0])
              for s in range(valence)]
    ids = {}
    for s in range(valence):
        e1, e2 = spokes[s], spokes[(s + 1) % valence]
        for p in range(m + 1):
            for q in range(m + 1):
                ids[(s, p, q)] = add(p * e1 + q * e2)
    quads = []
    for s in range(valence):
        for p in range(m):
            for q in range(m):
                quads.append([ids[(s, p, q)], ids[(s, p + 1, q)],
                              ids[(s, p + 1, q + 1)], ids[(s, p, q + 1)]])
    return ControlMesh(np.asarray(coords), np.asarray(quads))
