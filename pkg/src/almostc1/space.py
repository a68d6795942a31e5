"""The almost-C¹ space 𝓑.

Faces without extraordinary vertices keep their 𝓑* extraction.  On a face
with extraordinary vertices every 𝓑* function is refined to the C¹ tensor
basis by knot insertion at 1/2 and truncated: the 2x2 coefficient block next
to each extraordinary vertex is set to zero, so the function and its gradient
vanish there.  Three new functions per extraordinary vertex fill these blocks
with the barycentric coordinates of the corner-block control points
(projected to the tangent plane) with respect to a control triangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .basis import knot_insertion_matrix, reanchor
from .bstar import (
    CORNER,
    EDGE,
    EV,
    FACE,
    DofId,
    ExtractionTable,
    assemble_extraction_star,
)
from .errors import (
    DegenerateProjection,
    NegativeBarycentric,
    UnsupportedValence,
    ZeroNormal,
)
from .mesh import QuadMesh, one_ring
from .triangles import ControlTriangle, barycentric, control_triangle, enclosing_triangle_on_line

MODES = ("geometric", "template")
STRATEGIES = ("boundary-adapted", "min-area")

_K = knot_insertion_matrix()
KK = np.kron(_K, _K)  # (16, 9): flattened 3x3 -> flattened 4x4


def truncation_matrices() -> tuple[np.ndarray, ...]:
    out = []
    for l in range(4):
        T = np.ones((4, 4))
        js = slice(0, 2) if l in (0, 3) else slice(2, 4)
        ks = slice(0, 2) if l in (0, 1) else slice(2, 4)
        T[js, ks] = 0.0
        out.append(T)
    return tuple(out)


_TRUNC = truncation_matrices()


def truncation_mask(ev_flags) -> np.ndarray:
    m = np.ones((4, 4))
    for l, flag in enumerate(ev_flags):
        if flag:
            m = m * _TRUNC[l]
    return m


def subdivide_truncate(c: np.ndarray, ev_flags=(False,) * 4) -> np.ndarray:
    """``(K c K^T)`` masked by the truncation matrices of the flagged vertices."""
    c = np.asarray(c, dtype=float)
    hat = np.einsum("ja,ab...,kb->jk...", _K, c, _K)
    mask = truncation_mask(ev_flags)
    return hat * mask.reshape(mask.shape + (1,) * (hat.ndim - 2))


# -- tangent plane -------------------------------------------------------------
@dataclass(frozen=True)
class TangentFrame:
    origin: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    normal: np.ndarray

    def project(self, p: np.ndarray) -> np.ndarray:
        q = np.asarray(p, dtype=float) - self.origin
        return np.stack([q @ self.t1, q @ self.t2], axis=-1)

    def lift(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return self.origin + q[..., :1] * self.t1 + q[..., 1:2] * self.t2


def default_normal(blocks: np.ndarray) -> np.ndarray:
    """Average unit normal of the corner blocks ``(mu, 2, 2, d)`` around a vertex."""
    blocks = np.asarray(blocks, dtype=float)
    if blocks.shape[-1] == 2:
        return np.array([0.0, 0.0, 1.0])
    acc = np.zeros(3)
    for b in blocks:
        nrm = np.cross(b[1, 0] - b[0, 0], b[0, 1] - b[0, 0])
        ln = np.linalg.norm(nrm)
        if ln > 0:
            acc += nrm / ln
    ln = np.linalg.norm(acc)
    scale = max(1.0, float(len(blocks)))
    if ln < 1e-12 * scale:
        raise ZeroNormal("averaged corner normals cancel")
    return acc / ln


def tangent_frame(blocks: np.ndarray, normal: np.ndarray | None = None) -> TangentFrame:
    """Orthonormal frame with ``t1`` along the projected first spoke."""
    blocks = np.asarray(blocks, dtype=float)
    d = blocks.shape[-1]
    if d == 2:
        e = np.eye(2)
        return TangentFrame(np.zeros(2), e[0], e[1], np.array([0.0, 0.0, 1.0]))
    n = default_normal(blocks) if normal is None else np.asarray(normal, dtype=float)
    ln = np.linalg.norm(n)
    if ln == 0:
        raise ZeroNormal("zero normal vector")
    n = n / ln
    origin = blocks[0, 0, 0]
    spoke = blocks[0, 1, 0] - origin
    t1 = spoke - (spoke @ n) * n
    if np.linalg.norm(t1) < 1e-14 * max(np.linalg.norm(spoke), 1e-300):
        raise DegenerateProjection("first spoke is parallel to the normal")
    t1 /= np.linalg.norm(t1)
    return TangentFrame(origin, t1, np.cross(n, t1), n)


def tangent_projection(blocks: np.ndarray, frame: TangentFrame) -> np.ndarray:
    """Project corner blocks ``(mu, 2, 2, d)`` to tangent coordinates ``(mu, 2, 2, 2)``."""
    pts = frame.project(np.asarray(blocks, dtype=float))
    flat = pts.reshape(-1, 2)
    centred = flat - flat.mean(axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    if s[0] == 0 or s[1] <= 1e-12 * s[0]:
        raise DegenerateProjection("projected corner coefficients are degenerate")
    return pts


def ev_spline_coeffs(triangle, points: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Barycentric corner blocks ``(mu, 3, 2, 2)`` for points ``(mu, 2, 2, 2)``."""
    P = np.asarray(points, dtype=float)
    lam = barycentric(triangle, P.reshape(-1, 2))
    if lam.min() < -tol:
        raise NegativeBarycentric(f"point outside control triangle (lambda = {lam.min():.3e})")
    lam = np.where(lam < 0, 0.0, lam)
    lam /= lam.sum(axis=1, keepdims=True)
    return lam.reshape(P.shape[0], 2, 2, 3).transpose(0, 3, 1, 2)


def template_points(mu: int, boundary: bool = False) -> np.ndarray:
    """Regular configuration of the corner blocks, shape (mu, 2, 2, 2)."""
    if mu < (1 if boundary else 3):
        raise UnsupportedValence(f"no template for valence {mu}")
    step = math.pi / mu if boundary else 2 * math.pi / mu
    ang = step * np.arange(mu + 1)
    s = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    P = np.zeros((mu, 2, 2, 2))
    for i in range(mu):
        P[i, 1, 0] = s[i]
        P[i, 0, 1] = s[i + 1]
        P[i, 1, 1] = s[i] + s[i + 1]
    return P


def template_triangle(mu: int, boundary: bool = False) -> ControlTriangle:
    P = template_points(mu, boundary)
    if boundary:
        T = enclosing_triangle_on_line(P.reshape(-1, 2), [0.0, 0.0], [1.0, 0.0])
        m = 0.5 * (T[0] + T[1])
        T = m + (1.0 + 1e-6) * (T - m)
        e1, e2 = T[1] - T[0], T[2] - T[0]
        if e1[0] * e2[1] - e1[1] * e2[0] < 0:
            T = T[[0, 2, 1]]
        return ControlTriangle(T)
    rho = 2.0 * math.cos(math.pi / mu)
    a = math.pi / mu + 2 * math.pi / 3 * np.arange(3)
    return ControlTriangle(2.0 * rho * np.stack([np.cos(a), np.sin(a)], axis=1))


def ev_templates(mu: int, boundary: bool = False) -> np.ndarray:
    """Geometry-independent EV corner blocks ``(mu, 3, 2, 2)``."""
    return ev_spline_coeffs(template_triangle(mu, boundary), template_points(mu, boundary))


# -- the space -----------------------------------------------------------------
@dataclass(frozen=True)
class Geometry:
    """Control points (rows aligned with the space's dofs) and EV normals."""

    points: np.ndarray
    normals: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class EVData:
    vertex: int
    ring: tuple
    boundary: bool
    frame: TangentFrame | None
    triangle: ControlTriangle
    coeffs: np.ndarray  # (mu, 3, 2, 2)
    points: np.ndarray  # projected (or template) corner blocks (mu, 2, 2, 2)


@dataclass
class SplineSpace:
    mesh: QuadMesh
    table: ExtractionTable
    star: ExtractionTable
    eliminated: list
    ev: dict
    mode: str = "geometric"
    strategy: str = "boundary-adapted"
    star_to_space: np.ndarray | None = None

    @property
    def dofs(self) -> list[DofId]:
        return self.table.dofs

    @property
    def n_dofs(self) -> int:
        return self.table.n_dofs

    @property
    def classification(self):
        return self.mesh.classification


def eliminated_dofs(mesh: QuadMesh) -> list[DofId]:
    c = mesh.classification
    ev = c.extraordinary_vertices
    out = [DofId(FACE, f) for f in range(mesh.n_faces) if all(int(v) in ev for v in mesh.faces[f])]
    out += [
        DofId(EDGE, e)
        for e in sorted(c.boundary_edges)
        if all(int(v) in ev for v in mesh.edges[e])
    ]
    return out


def dof_set(mesh: QuadMesh) -> list[DofId]:
    from .bstar import dof_set_star

    gone = set(eliminated_dofs(mesh))
    keep = [d for d in dof_set_star(mesh) if d not in gone]
    evs = sorted(mesh.classification.extraordinary_vertices)
    return keep + [DofId(EV, g, nu) for g in evs for nu in (1, 2, 3)]


def star_corner_blocks(mesh: QuadMesh, star: ExtractionTable, x_star: np.ndarray, vertex: int):
    """Refined (untruncated) corner blocks of ``x*`` around ``vertex``."""
    ring = one_ring(mesh, vertex)
    blocks = []
    for f, l in ring:
        c = star.face_coefficients(x_star, f)
        hat = subdivide_truncate(c)
        blocks.append(reanchor(hat, l)[:2, :2])
    return ring, np.array(blocks)


def default_control_net(mesh: QuadMesh) -> np.ndarray:
    """Face centroids, boundary-edge midpoints and corner positions."""
    from .bstar import dof_set_star

    P = mesh.positions
    if P is None:
        raise ValueError("mesh has no vertex positions")
    rows = []
    for d in dof_set_star(mesh):
        if d.kind == FACE:
            rows.append(P[mesh.faces[d.entity]].mean(axis=0))
        elif d.kind == EDGE:
            rows.append(P[mesh.edges[d.entity]].mean(axis=0))
        else:
            rows.append(P[d.entity])
    return np.array(rows)


def build_space(
    mesh: QuadMesh,
    x_star: np.ndarray | None = None,
    normals: dict | None = None,
    mode: str = "geometric",
    triangle: str = "boundary-adapted",
) -> tuple[SplineSpace, Geometry]:
    """Construct 𝓑 and the geometry ``x`` from 𝓑* control points ``x*``.

    Parameters
    ----------
    mesh : QuadMesh
    x_star : (n*, d) array, optional
        Control points ordered as :func:`dof_set_star`; defaults to
        :func:`default_control_net`.
    normals : dict, optional
        Vertex id -> normal for extraordinary vertices (only used for d = 3;
        missing entries are averaged from the control net).
    mode : {"geometric", "template"}
    triangle : {"boundary-adapted", "min-area"}
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    star = assemble_extraction_star(mesh)
    if x_star is None:
        x_star = default_control_net(mesh)
    x_star = np.asarray(x_star, dtype=float)
    normals = dict(normals or {})
    c = mesh.classification
    evs = sorted(c.extraordinary_vertices)
    dofs = dof_set(mesh)
    gone = eliminated_dofs(mesh)
    col = {d: i for i, d in enumerate(dofs)}
    star_to_space = np.array([col.get(d, -1) for d in star.dofs])

    kind = np.zeros(mesh.n_faces, dtype=np.int8)
    kind[list(c.extraordinary_faces)] = 1

    # EV data first: the corner blocks come from the untruncated x*
    ev_data = {}
    ev_points = []
    for g in evs:
        ring, blocks = star_corner_blocks(mesh, star, x_star, g)
        boundary = g in c.boundary_vertices
        mu = len(ring)
        if mode == "geometric":
            frame = tangent_frame(blocks, normals.get(g))
            pts = tangent_projection(blocks, frame)
            base = (pts[0, 0, 0], pts[0, 1, 0]) if boundary else None
            tri = control_triangle(pts.reshape(-1, 2), triangle, base)
            coeffs = ev_spline_coeffs(tri, pts)
            xs = frame.lift(tri.vertices)
            nrm = frame.normal
        else:
            frame = None
            tri = template_triangle(mu, boundary)
            pts = template_points(mu, boundary)
            coeffs = ev_spline_coeffs(tri, pts)
            lam = coeffs.transpose(0, 2, 3, 1).reshape(-1, 3)
            xs = np.linalg.lstsq(lam, blocks.reshape(-1, blocks.shape[-1]), rcond=None)[0]
            nrm = None if blocks.shape[-1] == 2 else default_normal(blocks)
        if nrm is not None and g in normals:
            nrm = np.asarray(normals[g], dtype=float) / np.linalg.norm(normals[g])
        if nrm is not None:
            normals[g] = nrm
        ev_data[g] = EVData(g, tuple(ring), boundary, frame, tri, coeffs, pts)
        ev_points.append(xs)

    # extraction: regular faces keep 9 rows, EV faces get 16 refined rows
    keep_cols = np.flatnonzero(star_to_space >= 0)
    Pcol = sp.csr_matrix(
        (np.ones(len(keep_cols)), (keep_cols, star_to_space[keep_cols])),
        shape=(star.n_dofs, len(dofs)),
    )
    offset = np.concatenate([[0], np.cumsum(np.where(kind == 0, 9, 16))])
    evset = c.extraordinary_vertices
    rr, cc, vv = [], [], []
    reg = np.flatnonzero(kind == 0)
    if len(reg):
        rr.append((offset[reg][:, None] + np.arange(9)).ravel())
        cc.append((9 * reg[:, None] + np.arange(9)).ravel())
        vv.append(np.ones(9 * len(reg)))
    for f in np.flatnonzero(kind == 1):
        flags_ = [int(v) in evset for v in mesh.faces[f]]
        M = truncation_mask(flags_).reshape(16, 1) * KK
        i, j = np.nonzero(M)
        rr.append(offset[f] + i)
        cc.append(9 * f + j)
        vv.append(M[i, j])
    R = sp.csr_matrix(
        (np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))),
        shape=(offset[-1], 9 * mesh.n_faces),
    )
    E = R @ (star.E @ Pcol)
    er, ec, ev_ = [], [], []
    for g in evs:
        data = ev_data[g]
        for i, (f, l) in enumerate(data.ring):
            for nu in range(3):
                blk = np.zeros((4, 4))
                blk[:2, :2] = data.coeffs[i, nu]
                flat = np.rot90(blk, l).ravel()
                nz = np.flatnonzero(flat)
                er.append(offset[f] + nz)
                ec.append(np.full(len(nz), col[DofId(EV, g, nu + 1)]))
                ev_.append(flat[nz])
    if er:
        E = E + sp.csr_matrix(
            (np.concatenate(ev_), (np.concatenate(er), np.concatenate(ec))), shape=E.shape
        )
    E = sp.csr_matrix(E)
    E.eliminate_zeros()
    table = ExtractionTable(mesh, dofs, kind, E)

    X = np.zeros((len(dofs), x_star.shape[1]))
    X[star_to_space[keep_cols]] = x_star[keep_cols]
    for g, xs in zip(evs, ev_points):
        for nu in range(3):
            X[col[DofId(EV, g, nu + 1)]] = xs[nu]
    space = SplineSpace(mesh, table, star, gone, ev_data, mode, triangle, star_to_space)
    return space, Geometry(X, normals)
