"""Non-nested refinement of almost-C¹ geometries.

Every coarse face is split into 2x2 children.  The coarse geometry is first
written in the C¹ basis on each face (knot insertion at 1/2 on regular faces,
nothing to do on extraordinary faces); the refined 𝓑* control points are
then read off these 4x4 coefficient matrices.  Around an isolated
extraordinary vertex the children touching the vertex use circulant stencils
that make their control points coplanar in the vertex tangent plane.

All transfer steps are linear in the coarse control points, so the same code
runs on float arrays and on object arrays of :class:`fractions.Fraction`
(used to build the transfer operator exactly).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .basis import knot_insertion_matrix, reanchor
from .bstar import CORNER, EDGE, EV, FACE, DofId, dof_set_star
from .errors import AmbiguousAssignment
from .mesh import QuadMesh, RefinementMap, one_ring, refine_topology
from .space import Geometry, SplineSpace, build_space, star_corner_blocks

_Kf = [[Fraction(1), Fraction(0), Fraction(0)],
       [Fraction(1, 2), Fraction(1, 2), Fraction(0)],
       [Fraction(0), Fraction(1, 2), Fraction(1, 2)],
       [Fraction(0), Fraction(0), Fraction(1)]]


def _K(exact: bool):
    return np.array(_Kf, dtype=object) if exact else knot_insertion_matrix()


def refine_element_local(c: np.ndarray, exact: bool = False) -> np.ndarray:
    """4x4 C¹ coefficients of a face; 3x3 Bernstein input gets knot insertion."""
    c = np.asarray(c)
    if c.shape[0] == 4:
        return c
    K = _K(exact)
    if c.ndim == 2:
        return K.dot(c).dot(K.T)
    # (3, 3, m): apply along the two leading axes
    tmp = np.tensordot(K, c, axes=(1, 0))  # (4, 3, m)
    return np.moveaxis(np.tensordot(K, tmp, axes=(1, 1)), 0, 1)


# -- stencils ------------------------------------------------------------------
@dataclass(frozen=True)
class EvStencils:
    mu: int
    boundary: bool
    S: np.ndarray  # Fraction object arrays
    Q: np.ndarray

    def as_float(self):
        return self.S.astype(float), self.Q.astype(float)


def _circulant(first) -> np.ndarray:
    mu = len(first)
    out = np.empty((mu, mu), dtype=object)
    for r in range(mu):
        for s in range(mu):
            out[r, s] = first[(s - r) % mu]
    return out


def ev_stencils(mu: int, boundary: bool = False) -> EvStencils:
    """Exact circulant (interior) or reflected (boundary) stencil matrices."""
    if boundary:
        if mu < 2:
            raise ValueError("boundary stencils need mu >= 2")
        R = np.full((mu, mu - 1), Fraction(0), dtype=object)
        for r in range(1, mu):
            for k in range(r, mu):
                R[r - 1, k - 1] = (-1) ** (k - r) * (4 - Fraction(4 * k, mu))
        Jm = np.eye(mu, dtype=int)[::-1]
        Jm1 = np.eye(mu - 1, dtype=int)[::-1]
        S = (R + Jm.dot(R).dot(Jm1)) / 2
        Q = np.array(
            [[Fraction((-1) ** (j + k), mu) for k in range(mu)] for j in range(mu)], dtype=object
        )
        return EvStencils(mu, True, S, Q)
    if mu < 3:
        raise ValueError("interior stencils need mu >= 3")
    if mu % 2:
        S = _circulant([Fraction((-1) ** k) for k in range(mu)])
        Q = np.full((mu, mu), Fraction(0), dtype=object)
    else:
        S = _circulant([(-1) ** k * (2 - Fraction(2 * (k + 1), mu)) for k in range(mu)])
        Q = _circulant([Fraction((-1) ** k, mu) for k in range(mu)])
    return EvStencils(mu, False, S, Q)


def circulant_vertices(mesh: QuadMesh) -> list[int]:
    """Extraordinary vertices whose faces contain no other extraordinary vertex."""
    ev = mesh.classification.extraordinary_vertices
    out = []
    for g in sorted(ev):
        ok = True
        for f in mesh.vertex_faces[g]:
            if any(int(w) in ev and int(w) != g for w in mesh.faces[f]):
                ok = False
                break
        if ok:
            out.append(g)
    return out


# -- transfer ------------------------------------------------------------------
def local_coefficients(space: SplineSpace, X: np.ndarray, exact: bool = False) -> list:
    """Per-face 4x4 C¹ coefficient arrays ``(4, 4, m)`` of the geometry ``X``."""
    table = space.table
    out = []
    for f in range(space.mesh.n_faces):
        if exact:
            blk = exact_face_block(space, f)
            c = blk.dot(X)
        else:
            c = table.face_block(f) @ X
        n = table.order(f)
        c = c.reshape((n, n) + X.shape[1:])
        out.append(refine_element_local(c, exact))
    return out


def local_coefficients_fast(space: SplineSpace, X: np.ndarray) -> np.ndarray:
    """Float version of :func:`local_coefficients`, shape (F, 4, 4, m)."""
    table = space.table
    Y = table.E @ X
    F = space.mesh.n_faces
    out = np.empty((F, 4, 4) + X.shape[1:])
    reg = np.flatnonzero(table.kind == 0)
    if len(reg):
        idx = table.offset[reg][:, None] + np.arange(9)
        c = Y[idx].reshape((len(reg), 3, 3) + X.shape[1:])
        K = knot_insertion_matrix()
        out[reg] = np.einsum("ja,fab...,kb->fjk...", K, c, K)
    evf = np.flatnonzero(table.kind == 1)
    if len(evf):
        idx = table.offset[evf][:, None] + np.arange(16)
        out[evf] = Y[idx].reshape((len(evf), 4, 4) + X.shape[1:])
    return out


def exact_face_block(space: SplineSpace, f: int) -> np.ndarray:
    """Extraction block of one face in rational arithmetic.

    Entries coming from 𝓑* are small rationals and are recovered exactly.
    For extraordinary-vertex functions the first two barycentric coordinates
    are taken as exact binary fractions and the third as one minus their sum,
    so every slot row sums to exactly one.
    """
    table = space.table
    blk = table.face_block(f).toarray()
    out = np.full(blk.shape, Fraction(0), dtype=object)
    dofs = table.dofs
    for r in range(blk.shape[0]):
        nz = np.flatnonzero(blk[r])
        evs = {}
        for c in nz:
            d = dofs[c]
            if d.kind == EV:
                evs.setdefault(d.entity, {})[d.nu] = c
            else:
                out[r, c] = Fraction(float(blk[r, c])).limit_denominator(10**6)
        for cols in evs.values():
            present = sorted(cols)
            acc = Fraction(0)
            for nu in present[:-1]:
                out[r, cols[nu]] = Fraction(float(blk[r, cols[nu]]))
                acc += out[r, cols[nu]]
            out[r, cols[present[-1]]] = 1 - acc
    return out


def _assign(store: dict, key, value, tol=1e-12):
    if key in store:
        old = store[key]
        diff = np.max(np.abs(np.asarray(old, dtype=float) - np.asarray(value, dtype=float)))
        scale = max(1.0, float(np.max(np.abs(np.asarray(value, dtype=float)))))
        if diff > tol * scale:
            raise AmbiguousAssignment(f"dof {key} assigned twice with mismatch {diff:.3e}")
        return
    store[key] = value


def transfer_control_points(
    mesh: QuadMesh,
    fine: QuadMesh,
    rmap: RefinementMap,
    chat,
    exact: bool = False,
) -> np.ndarray:
    """Refined 𝓑* control points from per-face C¹ coefficients ``chat``.

    ``chat[f]`` is a (4, 4, m) array for coarse face ``f`` in its own frame.
    Returns an (n̂*, m) array ordered as :func:`dof_set_star` of ``fine``.
    """
    c = mesh.classification
    V, E = mesh.n_vertices, mesh.n_edges
    store: dict = {}
    # corners
    for g in sorted(c.corner_vertices):
        f = mesh.vertex_faces[g][0]
        l = mesh.local_index(f, g)
        _assign(store, DofId(CORNER, g), reanchor(chat[f], l)[0, 0])
    # boundary edges
    for e in sorted(c.boundary_edges):
        f = mesh.edge_faces[e][0]
        l = int(np.flatnonzero(mesh.face_edges[f] == e)[0])
        a, b = int(mesh.faces[f][l]), int(mesh.faces[f][(l + 1) % 4])
        loc = reanchor(chat[f], l)
        m = V + e
        _assign(store, DofId(EDGE, fine.edge_id(a, m)), loc[1, 0])
        _assign(store, DofId(EDGE, fine.edge_id(b, m)), loc[2, 0])
    # faces: child 4f + l sits at corner l and takes c11 of the re-anchored frame
    special = {}
    for g in circulant_vertices(mesh):
        ring = one_ring(mesh, g)
        mu = len(ring)
        boundary = g in c.boundary_vertices
        st = ev_stencils(mu, boundary)
        S, Q = (st.S, st.Q) if exact else st.as_float()
        locs = [reanchor(chat[f], l) for f, l in ring]
        ee = [loc[0, 1] for loc in locs]
        ff = [loc[1, 1] for loc in locs]
        if boundary:
            ee = ee[: mu - 1]
        ee = np.array(ee)
        ff = np.array(ff)
        y = np.tensordot(S, ee, axes=(1, 0)) + np.tensordot(Q, ff, axes=(1, 0))
        for r, (f, l) in enumerate(ring):
            special[4 * f + l] = y[r]
    for f in range(mesh.n_faces):
        for l in range(4):
            child = 4 * f + l
            if child in special:
                _assign(store, DofId(FACE, child), special[child])
            else:
                _assign(store, DofId(FACE, child), reanchor(chat[f], l)[1, 1])
    dofs = dof_set_star(fine)
    missing = [d for d in dofs if d not in store]
    if missing:
        raise AmbiguousAssignment(f"refined dofs without control point: {missing[:5]}")
    return np.array([store[d] for d in dofs])


@dataclass(frozen=True)
class TransferOperator:
    """Linear map from coarse control points to refined 𝓑* control points."""

    A: object  # scipy sparse (float) or dense Fraction object array
    rows: list
    cols: list

    def __matmul__(self, X):
        return self.A @ X

    def row_sums(self):
        if isinstance(self.A, np.ndarray) and self.A.dtype == object:
            return [sum(row, Fraction(0)) for row in self.A]
        return np.asarray(self.A.sum(axis=1)).ravel()


def transfer_operator(space: SplineSpace, exact: bool = False) -> TransferOperator:
    mesh = space.mesh
    fine, rmap = refine_topology(mesh)
    n = space.n_dofs
    if exact:
        I = np.full((n, n), Fraction(0), dtype=object)
        for i in range(n):
            I[i, i] = Fraction(1)
        chat = local_coefficients(space, I, exact=True)
        A = transfer_control_points(mesh, fine, rmap, chat, exact=True)
    else:
        chat = local_coefficients_fast(space, np.eye(n))
        A = sp.csr_matrix(transfer_control_points(mesh, fine, rmap, chat))
    return TransferOperator(A, dof_set_star(fine), list(space.dofs))


def refine_geometry(
    mesh: QuadMesh,
    space: SplineSpace,
    geometry: Geometry,
    check: bool = True,
) -> tuple[QuadMesh, SplineSpace, Geometry]:
    """One refinement step of the triple (mesh, space, geometry).

    With ``check`` set, asserts that the tangent-plane projection at every
    extraordinary vertex of the refined geometry is the identity (the refined
    corner blocks are already coplanar).
    """
    fine, rmap = refine_topology(mesh)
    chat = local_coefficients_fast(space, geometry.points)
    xs = transfer_control_points(mesh, fine, rmap, chat)
    sp_hat, geo_hat = build_space(
        fine, xs, geometry.normals, mode=space.mode, triangle=space.strategy
    )
    if check and space.mode == "geometric":
        _check_projection_identity(sp_hat, xs, geo_hat)
    return fine, sp_hat, geo_hat


def _check_projection_identity(space: SplineSpace, xs, geo, tol=1e-10):
    scale = max(1.0, float(np.abs(xs).max()))
    for g, data in space.ev.items():
        _, blocks = star_corner_blocks(space.mesh, space.star, xs, g)
        back = data.frame.lift(data.points)
        err = float(np.abs(back - blocks).max())
        if err > tol * scale:
            raise AssertionError(f"refined corner blocks at vertex {g} are not coplanar ({err:.2e})")


def refine_times(mesh, space, geometry, levels: int):
    for _ in range(levels):
        mesh, space, geometry = refine_geometry(mesh, space, geometry)
    return mesh, space, geometry


def _to_frame(a, b, k):
    for _ in range(k % 4):
        a, b = b, 1.0 - a
    return a, b


def child_coordinates(coarse: QuadMesh, fine: QuadMesh, faces, u, v):
    """Refined face and local coordinates of coarse parametric points.

    ``fine`` must be ``refine_topology(coarse)[0]``.  Points on the lines
    ``u = 1/2`` or ``v = 1/2`` go to the upper child.
    """
    faces = np.asarray(faces)
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    V, E = coarse.n_vertices, coarse.n_edges
    iu, iv = u >= 0.5, v >= 0.5
    lc = np.where(~iu & ~iv, 0, np.where(iu & ~iv, 1, np.where(iu & iv, 2, 3)))
    child = 4 * faces + lc
    fu, fv = np.empty_like(u), np.empty_like(v)
    for c in np.unique(child):
        sel = child == c
        f, l = divmod(int(c), 4)
        fe = coarse.face_edges[f]
        listed = [int(coarse.faces[f][l]), V + int(fe[l]), V + E + f, V + int(fe[(l - 1) % 4])]
        a, b = _to_frame(u[sel], v[sel], l)
        k = listed.index(int(fine.faces[c][0]))
        fu[sel], fv[sel] = _to_frame(2.0 * a, 2.0 * b, k)
    return child, fu, fv


def limit_check(
    mesh, space, geometry, levels: int, samples: int = 5, grading: int = 8
) -> list[float]:
    """Sup-distance between successive refinements at fixed coarse parameters.

    Each coarse face is sampled on a fixed tensor grid of parameters; the
    same points are located on the descendants after every refinement.
    """
    from .evaluation import eval_geometry

    # non-dyadic parameters graded towards the corners, so that samples never
    # fall on refined mesh lines and keep probing the shrinking EV regions
    g = 0.37 * 0.5 ** np.arange(grading)
    t = np.unique(np.concatenate([g, 1.0 - g, (np.arange(samples) + 0.5) / samples]))
    U, Vv = np.meshgrid(t, t, indexing="ij")
    U, Vv = U.ravel(), Vv.ravel()
    F0 = mesh.n_faces
    # track (face, u, v) of every sample through the refinements
    track = [(np.full(len(U), f), U.copy(), Vv.copy()) for f in range(F0)]

    def evaluate(sp_, geo_, tr):
        out = []
        for fs, us, vs in tr:
            pts = np.empty((len(us), geo_.dim))
            for f in np.unique(fs):
                sel = fs == f
                pts[sel] = eval_geometry(sp_, geo_, int(f), us[sel], vs[sel], order=0).x
            out.append(pts)
        return np.vstack(out)

    def descend(coarse, fine, tr):
        return [child_coordinates(coarse, fine, fs, us, vs) for fs, us, vs in tr]

    diffs = []
    prev = evaluate(space, geometry, track)
    for _ in range(levels):
        coarse = mesh
        mesh, space, geometry = refine_geometry(mesh, space, geometry, check=False)
        track = descend(coarse, mesh, track)
        cur = evaluate(space, geometry, track)
        diffs.append(float(np.abs(cur - prev).max()))
        prev = cur
    return diffs
