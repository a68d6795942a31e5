"""The mixed-smoothness space 𝓑*.

One dof sits on every face, every boundary edge and every corner vertex.
Its Bézier extraction is built entity by entity: each of the 9 Bernstein
coefficients of a face belongs to one mesh entity (a vertex, an edge or the
face itself), and every entity carries a fixed linear combination of dofs:

========================  ==========================================
entity                    coefficient of the dofs
========================  ==========================================
face                      1 for the face dof
interior edge             1/2 for each adjacent face dof
boundary edge             1 for the edge dof
interior vertex           1/valence for each incident face dof
boundary vertex           1/2 for each of its two boundary edge dofs
corner vertex             1 for the corner dof
========================  ==========================================

The coefficient matrix of a dof on a face is read off this table.  On
structured grids the result is the Bézier extraction of uniform biquadratic
B-splines with open knot vectors at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .basis import tensor_basis
from .errors import FaceOutOfRange
from .mesh import QuadMesh

FACE, EDGE, CORNER, EV = "face", "edge", "corner", "ev"


class DofId(NamedTuple):
    """Tagged dof identifier; ``nu`` is 1, 2 or 3 for EV dofs and 0 otherwise."""

    kind: str
    entity: int
    nu: int = 0

    def __str__(self) -> str:
        return f"{self.kind}:{self.entity}" + (f":{self.nu}" if self.kind == EV else "")


@dataclass(frozen=True)
class FlagSet:
    """Boundary flag (1 interior, 0 boundary) and corner flag (1 corner)."""

    vertex_boundary: np.ndarray
    edge_boundary: np.ndarray
    vertex_corner: np.ndarray


def flags(mesh: QuadMesh) -> FlagSet:
    c = mesh.classification
    vb = np.ones(mesh.n_vertices, dtype=np.int8)
    vb[list(c.boundary_vertices)] = 0
    eb = np.ones(mesh.n_edges, dtype=np.int8)
    eb[list(c.boundary_edges)] = 0
    vc = np.zeros(mesh.n_vertices, dtype=np.int8)
    vc[list(c.corner_vertices)] = 1
    return FlagSet(vb, eb, vc)


def dof_set_star(mesh: QuadMesh) -> list[DofId]:
    c = mesh.classification
    return (
        [DofId(FACE, f) for f in range(mesh.n_faces)]
        + [DofId(EDGE, e) for e in sorted(c.boundary_edges)]
        + [DofId(CORNER, v) for v in sorted(c.corner_vertices)]
    )


# slot (j, k) of a 3x3 matrix -> ("v", local vertex) / ("e", local edge) / ("f",)
_SLOT_ENTITY = {
    (0, 0): ("v", 0), (2, 0): ("v", 1), (2, 2): ("v", 2), (0, 2): ("v", 3),
    (1, 0): ("e", 0), (2, 1): ("e", 1), (1, 2): ("e", 2), (0, 1): ("e", 3),
    (1, 1): ("f", 0),
}


def slot_entities(mesh: QuadMesh) -> np.ndarray:
    """Global entity id of each of the 9 Bernstein slots of every face.

    Entities are numbered vertices first, then edges, then faces.
    Returns an (F, 9) integer array with slot ``j*3 + k``.
    """
    V, E = mesh.n_vertices, mesh.n_edges
    out = np.empty((mesh.n_faces, 9), dtype=np.int64)
    for (j, k), (kind, l) in _SLOT_ENTITY.items():
        s = 3 * j + k
        if kind == "v":
            out[:, s] = mesh.faces[:, l]
        elif kind == "e":
            out[:, s] = V + mesh.face_edges[:, l]
        else:
            out[:, s] = V + E + np.arange(mesh.n_faces)
    return out


def entity_dof_matrix(mesh: QuadMesh, dofs: list[DofId]) -> sp.csr_matrix:
    """Sparse (entities x dofs) matrix of the entity coefficients above."""
    c = mesh.classification
    index = {d: i for i, d in enumerate(dofs)}
    V, E = mesh.n_vertices, mesh.n_edges
    rows, cols, vals = [], [], []

    def put(r, d, w):
        rows.append(r)
        cols.append(index[d])
        vals.append(w)

    bedges_at: dict[int, list[int]] = {}
    for e in c.boundary_edges:
        for v in mesh.edges[e]:
            bedges_at.setdefault(int(v), []).append(e)
    for v in range(V):
        if v in c.corner_vertices:
            put(v, DofId(CORNER, v), 1.0)
        elif v in c.boundary_vertices:
            for e in bedges_at[v]:
                put(v, DofId(EDGE, e), 0.5)
        else:
            fs = mesh.vertex_faces[v]
            for f in fs:
                put(v, DofId(FACE, f), 1.0 / len(fs))
    for e in range(E):
        fs = mesh.edge_faces[e]
        if len(fs) == 1:
            put(V + e, DofId(EDGE, e), 1.0)
        else:
            for f in fs:
                put(V + e, DofId(FACE, f), 0.5)
    for f in range(mesh.n_faces):
        put(V + E + f, DofId(FACE, f), 1.0)
    n_ent = V + E + mesh.n_faces
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_ent, len(dofs)))


class ExtractionTable:
    """Per-face Bézier extraction of a spline space.

    The whole table is one sparse matrix ``E`` whose rows are the element
    slots of all faces (9 for Bernstein faces, 16 for C¹ faces, stacked in
    face order) and whose columns are dofs.  The coefficients of a function
    with dof vector ``f`` on face ``s`` are ``E[offset[s]:offset[s+1]] @ f``.
    """

    def __init__(self, mesh: QuadMesh, dofs: list[DofId], kind: np.ndarray, E: sp.spmatrix):
        self.mesh = mesh
        self.dofs = list(dofs)
        self.dof_index = {d: i for i, d in enumerate(self.dofs)}
        self.kind = np.asarray(kind, dtype=np.int8)
        self.kind.setflags(write=False)
        sizes = np.where(self.kind == 0, 9, 16)
        self.offset = np.concatenate([[0], np.cumsum(sizes)])
        self.E = sp.csr_matrix(E)
        self.E.sort_indices()

    @property
    def n_dofs(self) -> int:
        return len(self.dofs)

    @property
    def n_faces(self) -> int:
        return len(self.kind)

    def order(self, face: int) -> int:
        return 3 if self.kind[face] == 0 else 4

    def _check(self, face: int):
        if not 0 <= face < self.n_faces:
            raise FaceOutOfRange(f"face {face} outside 0..{self.n_faces - 1}")

    def face_block(self, face: int) -> sp.csr_matrix:
        self._check(face)
        return self.E[self.offset[face] : self.offset[face + 1]]

    def active_dofs(self, face: int) -> np.ndarray:
        blk = self.face_block(face)
        return np.unique(blk.indices[blk.data != 0])

    def coefficients(self, dof, face: int) -> np.ndarray:
        """Coefficient matrix ``c[j, k]`` of one dof on one face."""
        if not isinstance(dof, (int, np.integer)):
            dof = self.dof_index[dof]
        n = self.order(face)
        col = self.face_block(face)[:, dof].toarray().ravel()
        return col.reshape(n, n)

    def entries(self, face: int) -> list[tuple[DofId, np.ndarray]]:
        return [(self.dofs[d], self.coefficients(int(d), face)) for d in self.active_dofs(face)]

    def face_coefficients(self, values: np.ndarray, face: int) -> np.ndarray:
        """Element coefficients of a function (or vector field) on ``face``."""
        n = self.order(face)
        c = self.face_block(face) @ np.asarray(values)
        return c.reshape((n, n) + np.shape(values)[1:])

    def evaluate(self, values: np.ndarray, face: int, u, v, order: int = 0) -> list[np.ndarray]:
        """Evaluate a function and its parametric derivatives on one face."""
        coeffs = self.face_block(face) @ np.asarray(values)
        return [B @ coeffs for B in tensor_basis(int(self.kind[face]), u, v, order)]

    def basis_values(self, face: int, u, v, order: int = 0) -> tuple[np.ndarray, list[np.ndarray]]:
        """Values of every active basis function on ``face``.

        Returns the active dof indices and, per derivative, an array of shape
        (points, active dofs).
        """
        blk = self.face_block(face)
        act = self.active_dofs(face)
        local = blk[:, act].toarray()
        return act, [B @ local for B in tensor_basis(int(self.kind[face]), u, v, order)]

    def dump(self) -> dict:
        """JSON-ready description; matrices are written with rows ``k``."""
        faces = []
        for s in range(self.n_faces):
            ent = self.entries(s)
            faces.append(
                {
                    "face_id": s,
                    "kind": "bernstein" if self.kind[s] == 0 else "c1",
                    "dofs": [str(d) for d, _ in ent],
                    "matrices": [m.T.tolist() for _, m in ent],
                }
            )
        return {"layout": "matrices[k][j]: k along v (rows), j along u (columns)", "faces": faces}


def assemble_extraction_star(mesh: QuadMesh) -> ExtractionTable:
    dofs = dof_set_star(mesh)
    G = entity_dof_matrix(mesh, dofs)
    ent = slot_entities(mesh).ravel()
    E = G[ent]
    return ExtractionTable(mesh, dofs, np.zeros(mesh.n_faces, dtype=np.int8), E)


def _single(mesh: QuadMesh, dof: DofId, face: int) -> np.ndarray:
    return assemble_extraction_star(mesh).coefficients(dof, face)


def face_spline_coeffs(mesh: QuadMesh, face_dof: int, target: int) -> np.ndarray:
    return _single(mesh, DofId(FACE, face_dof), target)


def boundary_edge_spline_coeffs(mesh: QuadMesh, edge_dof: int, target: int) -> np.ndarray:
    return _single(mesh, DofId(EDGE, edge_dof), target)


def corner_vertex_spline_coeffs(mesh: QuadMesh, vertex_dof: int, target: int) -> np.ndarray:
    return _single(mesh, DofId(CORNER, vertex_dof), target)


def eval_bstar(table: ExtractionTable, coeffs, face: int, xi) -> float:
    u, v = xi
    return float(table.evaluate(np.asarray(coeffs, dtype=float), face, [u], [v])[0][0])
