"""Quadrilateral control meshes: half-edge connectivity, ring patches,
ghost-layer reflection and Catmull-Clark refinement.

Half-edge ids are implicit: halfedge ``4*q + k`` runs from corner ``k`` to
corner ``(k+1) % 4`` of quad ``q``.  All quads are wound counter-clockwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Raised for invalid mesh input or topology violations."""


# interior fan angles below this are treated as boundary corners when
# reflecting ghosts (square corners are pi/2, straight runs are ~pi)
CORNER_ANGLE = 0.75 * np.pi


class ControlMesh:
    """Manifold quad mesh, immutable after construction.

    Parameters
    ----------
    vertices : (nv, 3) float array
    quads : (nq, 4) int array, counter-clockwise vertex ids
    vertex_ghost, quad_ghost : optional bool flags for reflected entities
    ghost_partner : optional (nv,) int array; for ghost vertices the id of
        the interior vertex they mirror, -1 otherwise
    """

    def __init__(self, vertices, quads, vertex_ghost=None, quad_ghost=None,
                 ghost_partner=None, ghost_maps=None):
        self.vertices = np.array(vertices, dtype=float).reshape(-1, 3)
        self.quads = np.array(quads, dtype=np.int64).reshape(-1, 4)
        nv, nq = len(self.vertices), len(self.quads)
        self.vertex_ghost = (np.zeros(nv, bool) if vertex_ghost is None
                             else np.asarray(vertex_ghost, bool).copy())
        self.quad_ghost = (np.zeros(nq, bool) if quad_ghost is None
                           else np.asarray(quad_ghost, bool).copy())
        self.ghost_partner = (np.full(nv, -1, np.int64) if ghost_partner is None
                              else np.asarray(ghost_partner, np.int64).copy())
        # ghost_maps[g] = (Q, b) with x_g = Q @ x_partner + b, used to slave
        # ghost geometry to interior geometry in least-squares fits
        self.ghost_maps = dict(ghost_maps) if ghost_maps else {}
        self._validate_ids()
        self._build_halfedges()
        self._flag_boundary()
        self.vertices.setflags(write=False)
        self.quads.setflags(write=False)

    # -- construction ------------------------------------------------------

    def _validate_ids(self):
        nv = len(self.vertices)
        if len(self.quads) == 0:
            raise MeshError("mesh has no quads")
        if self.quads.min() < 0 or self.quads.max() >= nv:
            raise MeshError("face references vertex id out of range")
        for q, quad in enumerate(self.quads):
            if len(set(int(v) for v in quad)) != 4:
                raise MeshError(f"quad {q} has repeated vertex ids")
        used = np.zeros(nv, bool)
        used[self.quads.ravel()] = True
        if not used.all():
            raise MeshError(f"isolated vertices: {np.nonzero(~used)[0].tolist()}")

    def _build_halfedges(self):
        nq = len(self.quads)
        he_from = self.quads.ravel()
        he_to = self.quads[:, [1, 2, 3, 0]].ravel()
        emap = {}
        for h in range(4 * nq):
            key = (int(he_from[h]), int(he_to[h]))
            if key in emap:
                raise MeshError(
                    f"non-manifold or inconsistently wound edge {key}")
            emap[key] = h
        twin = np.full(4 * nq, -1, np.int64)
        for (a, b), h in emap.items():
            twin[h] = emap.get((b, a), -1)
        self._he_twin = twin
        self._he_from = he_from
        self._he_to = he_to
        self._edge_map = emap
        # deterministic outgoing half-edge per vertex: smallest he id
        out = np.full(len(self.vertices), -1, np.int64)
        for h in range(4 * nq - 1, -1, -1):
            out[he_from[h]] = h
        self._v_out = out

    def _flag_boundary(self):
        nb = np.zeros(len(self.vertices), bool)
        bdry = np.nonzero(self._he_twin == -1)[0]
        nb[self._he_from[bdry]] = True
        nb[self._he_to[bdry]] = True
        self.vertex_boundary = nb & ~self.vertex_ghost

    # -- half-edge primitives ---------------------------------------------

    def he_quad(self, h):
        return h // 4

    def he_next(self, h):
        return (h // 4) * 4 + (h + 1) % 4

    def he_prev(self, h):
        return (h // 4) * 4 + (h + 3) % 4

    def he_twin(self, h):
        return int(self._he_twin[h])

    def he_from(self, h):
        return int(self._he_from[h])

    def he_to(self, h):
        return int(self._he_to[h])

    # -- queries ------------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_quads(self):
        return len(self.quads)

    def core_quads(self):
        return np.nonzero(~self.quad_ghost)[0]

    def vertex_fan(self, v):
        """Outgoing half-edges around ``v`` in CCW order.

        Returns (halfedges, complete).  For boundary fans the walk starts at
        the clockwise-most element so the fan is contiguous.
        """
        h0 = int(self._v_out[v])
        if h0 < 0:
            raise MeshError(f"vertex {v} has no incident quads")
        # rewind clockwise to the fan start (or detect a closed fan):
        # the CW neighbour of outgoing h is next(twin(h))
        h = h0
        for _ in range(256):
            tw = self.he_twin(h)
            if tw < 0:
                break
            h_cw = self.he_next(tw)
            if h_cw == h0:  # closed fan
                h = h0
                break
            h = h_cw
        else:
            raise MeshError(f"fan walk around vertex {v} did not terminate")
        start = h
        fan = []
        complete = True
        h = start
        for _ in range(256):
            fan.append(h)
            p = self.he_prev(h)   # (w -> v)
            t = self.he_twin(p)   # (v -> w) in CCW-next quad
            if t < 0:
                complete = False
                break
            if t == start:
                break
            h = t
        else:
            raise MeshError(f"fan walk around vertex {v} did not terminate")
        return fan, complete

    def valence(self, v):
        """Number of incident quads."""
        return len(self.vertex_fan(v)[0])

    def has_complete_ring(self, v):
        return self.vertex_fan(v)[1]

    def extraordinary_vertices(self):
        """Non-ghost vertices with complete rings and valence != 4."""
        out = []
        for v in range(self.n_vertices):
            if self.vertex_ghost[v]:
                continue
            fan, complete = self.vertex_fan(v)
            if complete and len(fan) != 4:
                out.append(v)
        return out

    def boundary_loops(self):
        """Boundary vertex loops, CCW around the domain (interior on the left).

        Ghost entities are ignored: loops are computed on the core mesh.
        """
        core = self.core_submesh() if self.quad_ghost.any() else self
        loops = []
        seen = set()
        bdry = [h for h in range(4 * core.n_quads) if core._he_twin[h] == -1]
        succ = {}
        for h in bdry:
            a = core.he_from(h)
            if a in succ:
                raise MeshError(f"boundary pinches at vertex {a}")
            succ[a] = h
        for h0 in bdry:
            if h0 in seen:
                continue
            loop = []
            h = h0
            while True:
                seen.add(h)
                loop.append(core.he_from(h))
                h = succ[core.he_to(h)]
                if h == h0:
                    break
            loops.append(loop)
        return loops

    def edges(self):
        """Unique undirected edges as (a, b) with a < b."""
        pairs = np.stack([self._he_from, self._he_to], axis=1)
        pairs.sort(axis=1)
        return np.unique(pairs, axis=0)

    def element_diameter_max(self):
        """Max corner-to-corner distance over non-ghost quads."""
        qs = self.quads[~self.quad_ghost]
        x = self.vertices[qs]  # (n, 4, 3)
        d = 0.0
        for i in range(4):
            for j in range(i + 1, 4):
                d = max(d, float(np.linalg.norm(x[:, i] - x[:, j], axis=1).max()))
        return d

    def with_vertices(self, new_coords):
        """Same connectivity with replaced coordinates."""
        return ControlMesh(new_coords, self.quads, self.vertex_ghost,
                           self.quad_ghost, self.ghost_partner, self.ghost_maps)

    def core_submesh(self):
        """Strip ghost quads and vertices, renumbering the core contiguously."""
        if not self.quad_ghost.any():
            return self
        keep_q = ~self.quad_ghost
        used = np.zeros(self.n_vertices, bool)
        used[self.quads[keep_q].ravel()] = True
        if (used & self.vertex_ghost).any():
            raise MeshError("core quad references a ghost vertex")
        remap = -np.ones(self.n_vertices, np.int64)
        remap[used] = np.arange(used.sum())
        return ControlMesh(self.vertices[used], remap[self.quads[keep_q]])


# -- ring patches -----------------------------------------------------------

@dataclass
class OuterElement:
    """Second-ring element anchored at a one-ring vertex.

    The element is placed in the chart by rotating its unit square by
    ``90 * (offset + base)`` degrees about the anchor's chart position
    (base 1 for spoke anchors, 2 for diagonal anchors).
    """
    quad: int
    sector: int
    anchor_kind: str      # 'spoke' or 'diag'
    offset: int           # signed CCW fan offset from the sector element
    anchor_corner: int    # corner index of the anchor vertex in the quad
    anchor_vertex: int
    corner_pattern: tuple = ()   # canonical ring indices of the 4 corners


@dataclass
class RingPatch:
    center: int
    valence: int
    depth: int
    elements: list                 # one-ring quad ids, CCW by sector
    spokes: list                   # edge-neighbour vertex ids a_s
    diagonals: list                # diagonal vertex ids d_s
    center_corner: list            # corner index of the center in each element
    vertices: list                 # canonical ring vertex ids (center first)
    sector_of_element: dict = field(default_factory=dict)
    outer: list = field(default_factory=list)

    @property
    def vertex_index(self):
        return {v: i for i, v in enumerate(self.vertices)}

    def signature(self):
        """Connectivity fingerprint: identical patches give identical bases."""
        idx = self.vertex_index
        ring1 = tuple((idx[self.spokes[s]], idx[self.diagonals[s]])
                      for s in range(self.valence))
        outer = tuple((o.sector, o.anchor_kind, o.offset, o.anchor_corner,
                       o.corner_pattern)
                      for o in self.outer)
        return (self.valence, self.depth, ring1, outer, len(self.vertices))


def extract_ring(mesh: ControlMesh, vertex: int, depth: int = 1) -> RingPatch:
    """Ordered ring patch around a vertex.

    Sector s spans chart angles [2*pi*s/v, 2*pi*(s+1)/v]; the spoke edge a_s
    bounds it clockwise.  depth=2 additionally anchors every second-ring
    element at a one-ring vertex for chart placement.
    """
    if depth not in (1, 2):
        raise MeshError(f"ring depth must be 1 or 2, got {depth}")
    fan, complete = mesh.vertex_fan(vertex)
    if not complete:
        raise MeshError(f"vertex {vertex} has an incomplete one-ring "
                        "(boundary vertex without ghosts?)")
    v = len(fan)
    if v < 3:
        raise MeshError(f"vertex {vertex} has valence {v} < 3")
    elements, spokes, diagonals, center_corner = [], [], [], []
    for h in fan:
        elements.append(mesh.he_quad(h))
        spokes.append(mesh.he_to(h))
        diagonals.append(mesh.he_to(mesh.he_next(h)))
        center_corner.append(h % 4)
    vertices = [vertex]
    for s in range(v):
        vertices.extend((spokes[s], diagonals[s]))
    patch = RingPatch(vertex, v, depth, elements, spokes, diagonals,
                      center_corner, vertices,
                      {e: s for s, e in enumerate(elements)})
    if depth == 1:
        return patch

    placed = set(elements)
    seen_v = set(vertices)
    for s in range(v):
        for kind, w in (("diag", diagonals[s]), ("spoke", spokes[s])):
            wfan, wcomplete = mesh.vertex_fan(w)
            if not wcomplete:
                raise MeshError(
                    f"two-ring of vertex {vertex} needs a complete ring at "
                    f"vertex {w} (increase ghost layers?)")
            vw = len(wfan)
            wquads = [mesh.he_quad(h) for h in wfan]
            base = wquads.index(elements[s])
            # alternating CCW/CW fan offsets from the sector element
            seen_off = {0}
            for k in range(1, vw):
                for off in (k, -k):
                    r = off % vw
                    if r in seen_off:
                        continue
                    seen_off.add(r)
                    q = wquads[(base + off) % vw]
                    if q in placed:
                        continue
                    placed.add(q)
                    corner = list(mesh.quads[q]).index(w)
                    patch.outer.append(
                        OuterElement(q, s, kind, off, corner, w))
                    for u in mesh.quads[q]:
                        u = int(u)
                        if u not in seen_v:
                            seen_v.add(u)
                            patch.vertices.append(u)
    # canonical corner patterns for the signature
    vidx = patch.vertex_index
    for o in patch.outer:
        quad = [int(u) for u in mesh.quads[o.quad]]
        rot = quad[o.anchor_corner:] + quad[:o.anchor_corner]
        o.corner_pattern = tuple(vidx[u] for u in rot)
    return patch


# -- OBJ I/O ------------------------------------------------------------------

def load_obj(path, sidecar=None) -> ControlMesh:
    """Read a quad-only OBJ file (``v`` and ``f`` records, 1-based indices).

    If ``sidecar`` names a JSON file with a ``boundary_vertices`` list it is
    checked against the connectivity-derived boundary.
    """
    verts, faces = [], []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            tok = line.split()
            if not tok or tok[0] == "#":
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise MeshError(f"line {ln}: malformed vertex record")
                verts.append([float(tok[1]), float(tok[2]), float(tok[3])])
            elif tok[0] == "f":
                ids = [int(t.split("/")[0]) for t in tok[1:]]
                if len(ids) != 4:
                    raise MeshError(
                        f"non-quad face at index {len(faces)} (line {ln})")
                faces.append([i - 1 for i in ids])
    if not verts:
        raise MeshError(f"{path}: no vertices")
    mesh = ControlMesh(np.asarray(verts), np.asarray(faces))
    if sidecar is not None:
        with open(sidecar) as f:
            meta = json.load(f)
        stated = sorted(meta.get("boundary_vertices", []))
        actual = sorted(np.nonzero(mesh.vertex_boundary)[0].tolist())
        if stated and stated != actual:
            raise MeshError(
                f"sidecar boundary markers disagree with connectivity: "
                f"{stated[:8]}... vs {actual[:8]}...")
    return mesh


def save_obj(mesh: ControlMesh, path):
    """Write the non-ghost part of a mesh as OBJ."""
    core = mesh.core_submesh()
    with open(path, "w") as f:
        f.write("# quad control mesh\n")
        for x, y, z in core.vertices:
            f.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for quad in core.quads:
            f.write("f {} {} {} {}\n".format(*(int(i) + 1 for i in quad)))


# -- ghost reflection ---------------------------------------------------------

def _fan_angle(mesh, v):
    """Total angle of the element fan at a boundary vertex."""
    fan, _ = mesh.vertex_fan(v)
    total = 0.0
    x = mesh.vertices
    for h in fan:
        q = mesh.he_quad(h)
        quad = list(mesh.quads[q])
        k = quad.index(v)
        e1 = x[quad[(k + 1) % 4]] - x[v]
        e2 = x[quad[(k + 3) % 4]] - x[v]
        c = np.dot(e1, e2) / (np.linalg.norm(e1) * np.linalg.norm(e2))
        total += np.arccos(np.clip(c, -1.0, 1.0))
    return total


def _reflect_across_line(p, anchor, direction):
    """Rotation by pi about the 3D line (anchor + t*direction)."""
    t = direction / np.linalg.norm(direction)
    d = p - anchor
    return anchor + 2.0 * np.dot(d, t) * t - d


def _vertex_distances(mesh, seeds, maxdist):
    """Graph distance (edge hops) from a seed set, capped at maxdist."""
    dist = {s: 0 for s in seeds}
    frontier = list(seeds)
    for d in range(1, maxdist + 1):
        nxt = []
        for v in frontier:
            fan, _ = mesh.vertex_fan(v)
            nbrs = set()
            for h in fan:
                nbrs.add(mesh.he_to(h))
                nbrs.add(mesh.he_from(mesh.he_prev(h)))
            for u in nbrs:
                if u not in dist:
                    dist[u] = d
                    nxt.append(u)
        frontier = nxt
    return dist


def _ring_elements(mesh, center, layers):
    """Quads within `layers` vertex-incidence rings of a vertex."""
    verts = {center}
    quads = set()
    for _ in range(layers):
        new_quads = set()
        for v in list(verts):
            fan, _ = mesh.vertex_fan(v)
            for h in fan:
                new_quads.add(mesh.he_quad(h))
        quads |= new_quads
        for q in new_quads:
            verts.update(int(u) for u in mesh.quads[q])
    return quads


def reflect_ghosts(mesh: ControlMesh, layers: int = 1) -> ControlMesh:
    """Complete boundary rings by mirroring interior strips outside the domain.

    Straight or gently curved boundary runs are mirrored across per-vertex
    tangent lines; corner vertices (fan angle < 3*pi/4) get point-reflected
    fans so that convex corners acquire full rings.  Returns a new mesh with
    ghost vertices/quads appended; original entities keep their ids.
    """
    if layers < 1:
        raise MeshError("layers must be >= 1")
    if mesh.quad_ghost.any():
        mesh = mesh.core_submesh()
    loops = mesh.boundary_loops()
    if not loops:
        return mesh

    x = mesh.vertices
    new_coords = [x[i] for i in range(mesh.n_vertices)]
    new_quads = [list(map(int, q)) for q in mesh.quads]
    vertex_ghost = list(mesh.vertex_ghost)
    quad_ghost = [False] * mesh.n_quads
    ghost_partner = list(mesh.ghost_partner)
    ghost_maps = {}
    ghost_ids = {}       # (transform key, vertex) -> ghost vertex id

    def new_ghost(key, v, pos, lin):
        if key in ghost_ids:
            return ghost_ids[key]
        gid = len(new_coords)
        ghost_ids[key] = gid
        new_coords.append(pos)
        vertex_ghost.append(True)
        ghost_partner.append(v)
        ghost_maps[gid] = lin  # (Q, b): pos = Q @ x_v + b
        return gid

    for loop in loops:
        nloop = len(loop)
        angles = {v: _fan_angle(mesh, v) for v in loop}
        corners = [v for v in loop if angles[v] < CORNER_ANGLE]
        for v in loop:
            if angles[v] > 1.25 * np.pi:
                raise MeshError(
                    f"concave boundary corner at vertex {v} is unsupported")
        corner_set = set(corners)
        # sections: maximal corner-free runs (whole loop if no corners),
        # each including its delimiting corners as endpoints
        if corners:
            cpos = sorted(loop.index(c) for c in corners)
            sections = []
            for i, p in enumerate(cpos):
                pn = cpos[(i + 1) % len(cpos)]
                run = []
                j = p
                while True:
                    run.append(loop[j % nloop])
                    if j % nloop == pn and len(run) > 1:
                        break
                    j += 1
                sections.append(run)
        else:
            sections = [loop + [loop[0]]] if nloop else []

        # loop edge direction per vertex for tangent lines
        loop_edges = {}
        for i, v in enumerate(loop):
            loop_edges[v] = (loop[(i - 1) % nloop], loop[(i + 1) % nloop])

        def tangent_at(b, section):
            prev_v, next_v = loop_edges[b]
            dirs = []
            sec = set(section)
            for u in (prev_v, next_v):
                if b in corner_set and u not in sec:
                    continue  # corners: use only this section's edge
                d = x[u] - x[b]
                n = np.linalg.norm(d)
                if n > 0:
                    dirs.append(d / n)
            if not dirs:
                raise MeshError(f"cannot build tangent at boundary vertex {b}")
            if len(dirs) == 1:
                return dirs[0]
            d = dirs[0] - dirs[1]  # edge directions point away; difference
            n = np.linalg.norm(d)  # aligns them along the boundary
            if n < 1e-12:
                return dirs[0]
            return d / n

        # section mirrors
        section_key = {}
        for si, sec in enumerate(sections):
            skey = ("S", id(loop), si)
            section_key[si] = skey
            sec_set = set(sec)
            dist = _vertex_distances(mesh, sec, layers)
            strip = set()
            for q in range(mesh.n_quads):
                dmin = min(dist.get(int(u), 10 ** 9) for u in mesh.quads[q])
                if dmin <= layers - 1:
                    strip.add(q)
            # nearest section vertex per strip vertex (combinatorial anchor)
            anchor = {}
            frontier = list(sec)
            for b in sec:
                anchor[b] = b
            while frontier:
                nxt = []
                for v in frontier:
                    fan, _ = mesh.vertex_fan(v)
                    nbrs = set()
                    for h in fan:
                        nbrs.add(mesh.he_to(h))
                        nbrs.add(mesh.he_from(mesh.he_prev(h)))
                    for u in sorted(nbrs):
                        if u not in anchor:
                            anchor[u] = anchor[v]
                            nxt.append(u)
                frontier = nxt

            def mirror_vertex(v, skey=skey, sec_set=sec_set, sec=sec):
                if v in sec_set:
                    return v
                b = anchor.get(v)
                if b is None:
                    raise MeshError(f"strip vertex {v} has no boundary anchor")
                t = tangent_at(b, sec)
                pos = _reflect_across_line(x[v], x[b], t)
                tt = np.outer(t, t)
                Q = 2.0 * tt - np.eye(3)
                bvec = x[b] - Q @ x[b]
                return new_ghost((skey, v), v, pos, (Q, bvec))

            for q in sorted(strip):
                quad = [int(u) for u in mesh.quads[q]]
                img = [mirror_vertex(u) for u in quad]
                if all(a == b for a, b in zip(img, quad)):
                    continue
                quad_ghost.append(True)
                new_quads.append(img[::-1])  # reverse: mirror flips winding

        # corner point reflections
        for ci, c in enumerate(corners):
            # sections adjacent to corner c
            adj = [si for si, sec in enumerate(sections)
                   if sec[0] == c or sec[-1] == c]
            sec_vsets = {si: set(sections[si]) for si in adj}
            fanq = _ring_elements(mesh, c, layers)
            ckey = ("C", id(loop), ci)

            def point_vertex(v):
                if v == c:
                    return c
                # vertices on an adjacent section alias that mirror image
                for si in adj:
                    if v in sec_vsets[si]:
                        others = [sj for sj in adj if sj != si]
                        skey = section_key[others[0]] if others else ckey
                        break
                else:
                    skey = ckey
                pos = 2.0 * x[c] - x[v]
                Q = -np.eye(3)
                bvec = 2.0 * x[c]
                key = (skey, v) if skey != ckey else (ckey, v)
                return new_ghost(key, v, pos, (Q, bvec))

            for q in sorted(fanq):
                quad = [int(u) for u in mesh.quads[q]]
                img = [point_vertex(u) for u in quad]
                quad_ghost.append(True)
                new_quads.append(img)  # point reflection keeps winding

    out = ControlMesh(np.asarray(new_coords), np.asarray(new_quads),
                      vertex_ghost, quad_ghost, ghost_partner, ghost_maps)
    # every core vertex must now have a closed fan of the requested depth
    for v in range(mesh.n_vertices):
        try:
            extract_ring(out, v, depth=min(layers, 2))
        except MeshError as exc:
            raise MeshError(
                f"ghost reflection left vertex {v} incomplete: {exc}") from exc
    return out


# -- Catmull-Clark refinement -------------------------------------------------

def catmull_clark_refine(mesh: ControlMesh) -> ControlMesh:
    """One Catmull-Clark step on the non-ghost part of the mesh.

    If the mesh carries a ghost collar it participates in the smoothing
    stencils (this is how boundary rows are refined consistently) but only
    core entities are emitted; re-reflect ghosts afterwards.  The returned
    mesh has ``old_vertex_map`` mapping core vertex ids to refined ids.
    """
    nv, nq = mesh.n_vertices, mesh.n_quads
    x = mesh.vertices
    quads = mesh.quads

    face_pt = x[quads].mean(axis=1)

    epairs = mesh.edges()
    eid = {(int(a), int(b)): i for i, (a, b) in enumerate(epairs)}
    ne = len(epairs)
    edge_pt = np.zeros((ne, 3))
    edge_nface = np.zeros(ne, np.int64)
    edge_face_sum = np.zeros((ne, 3))
    for q in range(nq):
        for k in range(4):
            a, b = int(quads[q, k]), int(quads[q, (k + 1) % 4])
            e = eid[(a, b) if a < b else (b, a)]
            edge_nface[e] += 1
            edge_face_sum[e] += face_pt[q]
    mid = 0.5 * (x[epairs[:, 0]] + x[epairs[:, 1]])
    interior = edge_nface == 2
    edge_pt[interior] = 0.25 * (x[epairs[interior, 0]] + x[epairs[interior, 1]]
                                + edge_face_sum[interior])
    edge_pt[~interior] = mid[~interior]

    vert_pt = x.copy()
    for v in range(nv):
        fan, complete = mesh.vertex_fan(v)
        if not complete:
            continue  # fringe ghost; dropped below
        n = len(fan)
        F = np.zeros(3)
        R = np.zeros(3)
        for h in fan:
            F += face_pt[mesh.he_quad(h)]
            R += 0.5 * (x[v] + x[mesh.he_to(h)])
        F /= n
        R /= n
        vert_pt[v] = (F + 2.0 * R + (n - 3.0) * x[v]) / n

    core = np.nonzero(~mesh.quad_ghost)[0]
    keep_v = np.zeros(nv, bool)
    keep_v[quads[core].ravel()] = True
    keep_e = np.zeros(ne, bool)
    for q in core:
        for k in range(4):
            a, b = int(quads[q, k]), int(quads[q, (k + 1) % 4])
            keep_e[eid[(a, b) if a < b else (b, a)]] = True

    v_new = -np.ones(nv, np.int64)
    v_new[keep_v] = np.arange(keep_v.sum())
    off_e = keep_v.sum()
    e_new = -np.ones(ne, np.int64)
    e_new[keep_e] = off_e + np.arange(keep_e.sum())
    off_f = off_e + keep_e.sum()
    f_new = -np.ones(nq, np.int64)
    f_new[core] = off_f + np.arange(len(core))

    coords = np.vstack([vert_pt[keep_v], edge_pt[keep_e], face_pt[core]])
    out_quads = []
    for q in core:
        vs = [int(u) for u in quads[q]]
        es = []
        for k in range(4):
            a, b = vs[k], vs[(k + 1) % 4]
            es.append(e_new[eid[(a, b) if a < b else (b, a)]])
        f = f_new[q]
        for k in range(4):
            out_quads.append([v_new[vs[k]], es[k], f, es[(k + 3) % 4]])
    refined = ControlMesh(coords, np.asarray(out_quads))
    refined.old_vertex_map = v_new
    return refined
