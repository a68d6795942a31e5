"""Topological quadrilateral meshes.

A :class:`QuadMesh` stores faces as counter-clockwise vertex quadruples.  Each
face is rotated so that its smallest vertex id comes first; that vertex is the
local origin of the face, ``u`` runs towards the second vertex and ``v``
towards the fourth.  Local edge ``l`` joins local vertices ``l`` and ``l+1``.

Refinement appends new vertices after the old ones (edge midpoints first, then
face centres), so every child face keeps its old parent vertex as anchor and
the child frame is the parent frame re-anchored at that vertex and scaled by
one half.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DesignatedCornerIsExtraordinary,
    DesignatedCornerNotOnBoundary,
    HangingNode,
    InconsistentOrientation,
    InvalidFace,
    KissingVertex,
    NonManifoldEdge,
)


@dataclass(frozen=True)
class MeshClassification:
    valence: np.ndarray
    boundary_vertices: frozenset
    interior_vertices: frozenset
    boundary_edges: frozenset
    interior_edges: frozenset
    corner_vertices: frozenset
    extraordinary_vertices: frozenset
    spoke_edges: frozenset
    extraordinary_faces: frozenset

    def is_boundary_vertex(self, v: int) -> bool:
        return v in self.boundary_vertices

    def is_extraordinary(self, v: int) -> bool:
        return v in self.extraordinary_vertices


class QuadMesh:
    """Validated, immutable quadrilateral mesh.

    Use :func:`build_mesh` to construct one; the constructor assumes its
    inputs are already oriented and canonical.
    """

    def __init__(
        self,
        n_vertices: int,
        faces: np.ndarray,
        positions: np.ndarray | None = None,
        designated_corners: Iterable[int] = (),
    ):
        self.n_vertices = int(n_vertices)
        faces = np.array(faces, dtype=np.int64).reshape(-1, 4)
        faces.setflags(write=False)
        self.faces = faces
        if positions is not None:
            positions = np.array(positions, dtype=float)
            positions.setflags(write=False)
        self.positions = positions
        self.designated_corners = frozenset(int(c) for c in designated_corners)

        edge_faces: dict[tuple[int, int], list[int]] = {}
        for f, quad in enumerate(faces):
            for l in range(4):
                a, b = int(quad[l]), int(quad[(l + 1) % 4])
                edge_faces.setdefault((min(a, b), max(a, b)), []).append(f)
        keys = sorted(edge_faces)
        self.edges = np.array(keys, dtype=np.int64).reshape(-1, 2)
        self.edges.setflags(write=False)
        self.edge_index = {k: i for i, k in enumerate(keys)}
        self.edge_faces = tuple(tuple(edge_faces[k]) for k in keys)
        fe = np.empty((len(faces), 4), dtype=np.int64)
        for f, quad in enumerate(faces):
            for l in range(4):
                a, b = int(quad[l]), int(quad[(l + 1) % 4])
                fe[f, l] = self.edge_index[(min(a, b), max(a, b))]
        fe.setflags(write=False)
        self.face_edges = fe

        vf: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for f, quad in enumerate(faces):
            for v in quad:
                vf[int(v)].append(f)
        self.vertex_faces = tuple(tuple(x) for x in vf)
        self.classification = _classify(self)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def dim(self) -> int | None:
        return None if self.positions is None else self.positions.shape[1]

    def local_index(self, face: int, vertex: int) -> int:
        hits = np.flatnonzero(self.faces[face] == vertex)
        if len(hits) == 0:
            raise KeyError(f"vertex {vertex} not in face {face}")
        return int(hits[0])

    def edge_id(self, a: int, b: int) -> int:
        return self.edge_index[(min(a, b), max(a, b))]

    def other_face(self, edge: int, face: int) -> int | None:
        fs = self.edge_faces[edge]
        if len(fs) == 1:
            return None
        return fs[1] if fs[0] == face else fs[0]

    def is_boundary_edge(self, edge: int) -> bool:
        return len(self.edge_faces[edge]) == 1

    def __repr__(self) -> str:
        c = self.classification
        return (
            f"QuadMesh(V={self.n_vertices}, E={self.n_edges}, F={self.n_faces}, "
            f"EV={len(c.extraordinary_vertices)}, corners={len(c.corner_vertices)})"
        )


def _classify(mesh: QuadMesh) -> MeshClassification:
    valence = np.array([len(fs) for fs in mesh.vertex_faces], dtype=np.int64)
    bedges = frozenset(e for e, fs in enumerate(mesh.edge_faces) if len(fs) == 1)
    iedges = frozenset(range(mesh.n_edges)) - bedges
    bverts = frozenset(int(v) for e in bedges for v in mesh.edges[e])
    used = frozenset(v for v in range(mesh.n_vertices) if valence[v] > 0)
    iverts = used - bverts
    for c in mesh.designated_corners:
        if c not in bverts:
            raise DesignatedCornerNotOnBoundary(f"designated corner {c} is not a boundary vertex")
        if valence[c] > 2:
            raise DesignatedCornerIsExtraordinary(
                f"designated corner {c} has valence {valence[c]} > 2"
            )
    corners = frozenset(v for v in bverts if valence[v] == 1) | mesh.designated_corners
    ev = frozenset(
        v for v in used if (v in iverts and valence[v] != 4) or (v in bverts and valence[v] > 2)
    )
    spokes = frozenset(e for e in range(mesh.n_edges) if any(int(v) in ev for v in mesh.edges[e]))
    evfaces = frozenset(
        f for f in range(mesh.n_faces) if any(int(v) in ev for v in mesh.faces[f])
    )
    valence.setflags(write=False)
    return MeshClassification(
        valence=valence,
        boundary_vertices=bverts,
        interior_vertices=iverts,
        boundary_edges=bedges,
        interior_edges=iedges,
        corner_vertices=corners,
        extraordinary_vertices=ev,
        spoke_edges=spokes,
        extraordinary_faces=evfaces,
    )


def classify(mesh: QuadMesh) -> MeshClassification:
    return mesh.classification


def _canonical(quad: Sequence[int]) -> tuple[int, int, int, int]:
    k = int(np.argmin(quad))
    return tuple(int(quad[(k + i) % 4]) for i in range(4))


def build_mesh(
    vertices,
    faces: Sequence[Sequence[int]],
    designated_corners: Iterable[int] = (),
) -> QuadMesh:
    """Validate and orient a quad mesh.

    Parameters
    ----------
    vertices : int or array_like, shape (V, d)
        Vertex count, or vertex positions (used only for default control
        nets and the hanging-node check).
    faces : sequence of 4-tuples
        Vertex quadruples.  Orientation is made consistent per connected
        component, keeping the orientation of the lowest-numbered face.
    designated_corners : iterable of int
        Boundary vertices to treat as corners in addition to valence-1 ones.
    """
    if np.isscalar(vertices):
        n_vertices, positions = int(vertices), None
    else:
        positions = np.asarray(vertices, dtype=float)
        if positions.ndim != 2:
            raise InvalidFace("vertex positions must be a (V, d) array")
        n_vertices = len(positions)

    quads = [tuple(int(v) for v in q) for q in faces]
    for q in quads:
        if len(q) != 4:
            raise InvalidFace(f"face {q} is not a quadrilateral")
        if len(set(q)) != 4:
            raise InvalidFace(f"face {q} repeats a vertex")
        if min(q) < 0 or max(q) >= n_vertices:
            raise InvalidFace(f"face {q} references a missing vertex")
    seen = {}
    for i, q in enumerate(quads):
        key = frozenset(q)
        if key in seen:
            raise InvalidFace(f"faces {seen[key]} and {i} share the same vertices")
        seen[key] = i

    edge_faces: dict[tuple[int, int], list[int]] = {}
    for f, q in enumerate(quads):
        for l in range(4):
            a, b = q[l], q[(l + 1) % 4]
            edge_faces.setdefault((min(a, b), max(a, b)), []).append(f)
    for e, fs in edge_faces.items():
        if len(fs) > 2:
            raise NonManifoldEdge(f"edge {e} is shared by {len(fs)} faces")

    quads = _orient(quads, edge_faces)
    # a T-junction also splits the fans at its endpoints; report the cause
    if positions is not None:
        _check_hanging(positions, edge_faces)
    _check_kissing(n_vertices, quads, edge_faces)
    return QuadMesh(n_vertices, [_canonical(q) for q in quads], positions, designated_corners)


def _directed(q, a, b) -> bool:
    for l in range(4):
        if q[l] == a and q[(l + 1) % 4] == b:
            return True
    return False


def _orient(quads, edge_faces):
    quads = list(quads)
    flipped = [None] * len(quads)
    for seed in range(len(quads)):
        if flipped[seed] is not None:
            continue
        flipped[seed] = False
        queue = deque([seed])
        while queue:
            f = queue.popleft()
            q = quads[f]
            for l in range(4):
                a, b = q[l], q[(l + 1) % 4]
                for g in edge_faces[(min(a, b), max(a, b))]:
                    if g == f:
                        continue
                    same = _directed(quads[g], a, b)
                    if flipped[g] is None:
                        if same:
                            quads[g] = tuple(reversed(quads[g]))
                            flipped[g] = True
                        else:
                            flipped[g] = False
                        queue.append(g)
                    elif same:
                        raise InconsistentOrientation(
                            f"faces {f} and {g} cannot be oriented consistently"
                        )
    return quads


def _check_kissing(n_vertices, quads, edge_faces):
    vf: list[list[int]] = [[] for _ in range(n_vertices)]
    for f, q in enumerate(quads):
        for v in q:
            vf[v].append(f)
    for v, fs in enumerate(vf):
        if len(fs) < 2:
            continue
        parent = {f: f for f in fs}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for f in fs:
            q = quads[f]
            l = q.index(v)
            for w in (q[(l + 1) % 4], q[(l - 1) % 4]):
                for g in edge_faces[(min(v, w), max(v, w))]:
                    parent[find(g)] = find(f)
        if len({find(f) for f in fs}) > 1:
            raise KissingVertex(f"faces around vertex {v} are not edge-connected")


def _check_hanging(positions, edge_faces, tol=1e-12):
    bedges = [e for e, fs in edge_faces.items() if len(fs) == 1]
    bverts = sorted({v for e in bedges for v in e})
    if not bverts:
        return
    P = positions
    scale = max(float(np.ptp(P, axis=0).max()), 1.0)
    for a, b in bedges:
        pa, pb = P[a], P[b]
        d = pb - pa
        L2 = float(d @ d)
        if L2 == 0.0:
            continue
        for m in bverts:
            if m in (a, b):
                continue
            t = float((P[m] - pa) @ d) / L2
            if 1e-9 < t < 1 - 1e-9:
                r = P[m] - (pa + t * d)
                if math.sqrt(float(r @ r)) < tol * scale:
                    raise HangingNode(f"vertex {m} lies inside boundary edge ({a}, {b})")


def one_ring(mesh: QuadMesh, vertex: int) -> list[tuple[int, int]]:
    """Faces around ``vertex`` in counter-clockwise order.

    Returns ``(face, local_index)`` pairs.  In the frame of face ``r``
    re-anchored at the vertex, the ``v``-edge is shared with face ``r+1``
    and the ``u``-edge with face ``r-1``.  For boundary vertices the fan
    starts at the face whose ``u``-edge is a boundary edge.
    """
    faces = mesh.vertex_faces[vertex]
    if not faces:
        return []
    start = faces[0]
    if vertex in mesh.classification.boundary_vertices:
        for f in faces:
            l = mesh.local_index(f, vertex)
            a = int(mesh.faces[f][(l + 1) % 4])
            if mesh.is_boundary_edge(mesh.edge_id(vertex, a)):
                start = f
                break
    ring = []
    f = start
    while True:
        l = mesh.local_index(f, vertex)
        ring.append((f, l))
        b = int(mesh.faces[f][(l - 1) % 4])
        g = mesh.other_face(mesh.edge_id(vertex, b), f)
        if g is None or g == start:
            break
        f = g
    return ring


@dataclass(frozen=True)
class RefinementMap:
    """Bookkeeping from one 2x2 split.

    ``parent_face[4*s + l]`` is ``s`` and ``child_corner`` is ``l``: the child
    sits at local vertex ``l`` of its parent (children i, j, k, l in order).
    ``vertex_origin`` records, for every refined vertex, whether it is an old
    vertex, an edge midpoint or a face centre, with the old entity id.
    ``parent_edge`` maps refined boundary edges to ``(old edge, old endpoint)``.
    """

    n_old_vertices: int
    parent_face: np.ndarray
    child_corner: np.ndarray
    vertex_origin: tuple
    parent_edge: dict = field(default_factory=dict)

    def vertex_carry(self, v: int) -> int:
        if v >= self.n_old_vertices:
            raise KeyError(v)
        return v


def refine_topology(mesh: QuadMesh) -> tuple[QuadMesh, RefinementMap]:
    V, E, F = mesh.n_vertices, mesh.n_edges, mesh.n_faces
    mid = lambda e: V + e  # noqa: E731
    ctr = lambda f: V + E + f  # noqa: E731
    children = []
    for s, quad in enumerate(mesh.faces):
        fe = mesh.face_edges[s]
        for l in range(4):
            children.append(
                (int(quad[l]), mid(int(fe[l])), ctr(s), mid(int(fe[(l - 1) % 4])))
            )
    origin = (
        [("vertex", v) for v in range(V)]
        + [("edge", e) for e in range(E)]
        + [("face", f) for f in range(F)]
    )
    positions = None
    if mesh.positions is not None:
        P = mesh.positions
        positions = np.vstack(
            [P, 0.5 * (P[mesh.edges[:, 0]] + P[mesh.edges[:, 1]]), P[mesh.faces].mean(axis=1)]
        )
    fine = QuadMesh(
        V + E + F, [_canonical(c) for c in children], positions, mesh.designated_corners
    )
    parent_edge = {}
    for e in mesh.classification.boundary_edges:
        a, b = (int(x) for x in mesh.edges[e])
        parent_edge[fine.edge_id(a, mid(e))] = (e, a)
        parent_edge[fine.edge_id(b, mid(e))] = (e, b)
    rmap = RefinementMap(
        n_old_vertices=V,
        parent_face=np.repeat(np.arange(F), 4),
        child_corner=np.tile(np.arange(4), F),
        vertex_origin=tuple(origin),
        parent_edge=parent_edge,
    )
    return fine, rmap


def refine_times(mesh: QuadMesh, n: int) -> QuadMesh:
    for _ in range(n):
        mesh, _ = refine_topology(mesh)
    return mesh


# -- fixtures -----------------------------------------------------------------
def disk_mesh(mu: int, radius: float = 1.0, spoke: float = 0.8) -> QuadMesh:
    """``mu`` quads fanned around one interior vertex.

    Vertex 0 is the centre, ``1 + 2r`` the spoke ends at ``spoke * radius``
    and ``2 + 2r`` the valence-1 corners on the circle between them.  Spoke
    ends inside the circle keep the corner angles away from 180 degrees.
    """
    if mu < 3:
        raise ValueError("disk_mesh needs mu >= 3")
    pos = [np.zeros(2)]
    for r in range(mu):
        for t, rad in ((r, spoke * radius), (r + 0.5, radius)):
            a = 2 * math.pi * t / mu
            pos.append(rad * np.array([math.cos(a), math.sin(a)]))
    faces = [(0, 1 + 2 * r, 2 + 2 * r, 1 + 2 * ((r + 1) % mu)) for r in range(mu)]
    return build_mesh(np.array(pos), faces)


def structured_grid(nx: int, ny: int | None = None, size=(1.0, 1.0)) -> QuadMesh:
    ny = nx if ny is None else ny
    xs = np.linspace(0.0, size[0], nx + 1)
    ys = np.linspace(0.0, size[1], ny + 1)
    pos = np.array([(x, y) for y in ys for x in xs])
    vid = lambda i, j: j * (nx + 1) + i  # noqa: E731
    faces = [
        (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
        for j in range(ny)
        for i in range(nx)
    ]
    return build_mesh(pos, faces)


def polygon_quad_mesh(points, polygons, designated_corners=()) -> QuadMesh:
    """Split every polygon into quads around its centroid.

    An ``n``-gon contributes ``n`` quads and a centre vertex of valence
    ``n``; original vertices get the number of incident polygons as valence.
    """
    points = np.asarray(points, dtype=float)
    pos = [p for p in points]
    mids: dict[tuple[int, int], int] = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in mids:
            mids[key] = len(pos)
            pos.append(0.5 * (points[a] + points[b]))
        return mids[key]

    faces = []
    for poly in polygons:
        n = len(poly)
        c = len(pos)
        pos.append(points[list(poly)].mean(axis=0))
        m = [midpoint(poly[i], poly[(i + 1) % n]) for i in range(n)]
        for i in range(n):
            faces.append((poly[i], m[i], c, m[i - 1]))
    return build_mesh(np.array(pos), faces, designated_corners)


def mixed_mesh() -> QuadMesh:
    """Planar fixture with interior and boundary extraordinary vertices.

    Valence-3 and valence-5 interior vertices (several of them sharing
    faces), one valence-3 boundary vertex, three valence-1 corners and one
    designated valence-2 corner.
    """
    pts = [
        (0, 0), (2, 0), (4, 0), (4, 2), (4, 4), (2, 4), (0, 4), (0, 2),
        (1.2, 1.5), (2.8, 1.5), (2, 2.8),
    ]
    polys = [
        (0, 1, 8),
        (1, 9, 8),
        (1, 2, 3, 9),
        (9, 3, 4, 5, 10),
        (8, 9, 10),
        (0, 8, 7),
        (7, 8, 10, 5, 6),
    ]
    return polygon_quad_mesh(pts, polys, designated_corners=(0,))
