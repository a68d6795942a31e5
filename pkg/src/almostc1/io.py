"""File formats: quad OBJ meshes, JSON sidecars and dumps, CSV, legacy VTK.

Floats are written with 17 significant digits so that doubles round-trip.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import MeshParseError
from .evaluation import eval_function, eval_geometry
from .mesh import QuadMesh, build_mesh


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_tree(obj):
    """Round-trip representation of nested floats for JSON output."""
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _fmt_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_fmt_tree(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _fmt_tree(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# -- OBJ ---------------------------------------------------------------------------
def parse_obj(text: str):
    """Vertices and quad faces (0-based) from OBJ text."""
    verts, faces = [], []
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            try:
                verts.append([float(x) for x in rest[:3]])
            except ValueError as exc:
                raise MeshParseError(f"line {no}: bad vertex") from exc
            if len(rest) < 2:
                raise MeshParseError(f"line {no}: vertex needs at least two coordinates")
        elif tag == "f":
            if len(rest) != 4:
                raise MeshParseError(f"line {no}: only quad faces are supported")
            try:
                idx = [int(tok.split("/")[0]) for tok in rest]
            except ValueError as exc:
                raise MeshParseError(f"line {no}: bad face index") from exc
            n = len(verts)
            faces.append([i - 1 if i > 0 else n + i for i in idx])
    if not verts or not faces:
        raise MeshParseError("mesh file has no vertices or no faces")
    width = min(len(v) for v in verts)
    P = np.array([v[:width] for v in verts])
    if width == 3 and np.all(P[:, 2] == 0.0):
        P = P[:, :2]
    return P, faces


def read_sidecar(path) -> tuple[list[int], dict]:
    data = json.loads(Path(path).read_text())
    corners = [int(c) for c in data.get("corners", [])]
    normals = {int(k): np.asarray(v, dtype=float) for k, v in data.get("normals", {}).items()}
    return corners, normals


def read_mesh(path, sidecar=None) -> tuple[QuadMesh, dict]:
    """Read a quad OBJ (and optional sidecar); returns the mesh and EV normals."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshParseError(str(exc)) from exc
    P, faces = parse_obj(text)
    corners, normals = read_sidecar(sidecar) if sidecar else ([], {})
    return build_mesh(P, faces, designated_corners=corners), normals


def write_obj(path, positions, faces) -> None:
    lines = []
    for p in np.asarray(positions, dtype=float):
        coords = list(p) + [0.0] * (3 - len(p))
        lines.append("v " + " ".join(fmt(c) for c in coords))
    for f in faces:
        lines.append("f " + " ".join(str(int(i) + 1) for i in f))
    Path(path).write_text("\n".join(lines) + "\n")


def write_mesh(path, mesh: QuadMesh, normals: dict | None = None) -> None:
    """Write the OBJ and, when needed, a ``.json`` sidecar next to it."""
    if mesh.positions is None:
        raise ValueError("mesh has no positions to write")
    write_obj(path, mesh.positions, mesh.faces)
    if mesh.designated_corners or normals:
        write_sidecar(Path(path).with_suffix(".json"), mesh.designated_corners, normals)


def write_sidecar(path, corners=(), normals: dict | None = None) -> None:
    data = {
        "corners": sorted(int(c) for c in corners),
        "normals": {str(int(k)): np.asarray(v, dtype=float).tolist() for k, v in sorted((normals or {}).items())},
    }
    write_json(path, data)


# -- dumps -------------------------------------------------------------------------
def space_dump(space, geometry=None) -> dict:
    """Per-face extraction records plus one record per extraordinary vertex."""
    out = space.table.dump()
    evs = []
    for g, data in sorted(space.ev.items()):
        rec = {"ev": int(g), "triangle": np.asarray(data.triangle.vertices).tolist()}
        if geometry is not None and g in geometry.normals:
            rec["normal"] = np.asarray(geometry.normals[g]).tolist()
        elif data.frame is not None:
            rec["normal"] = np.asarray(data.frame.normal).tolist()
        evs.append(rec)
    out["extraordinary"] = evs
    return out


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_fmt_tree(obj), indent=1) + "\n")


CSV_COLUMNS = ("level", "n", "err_L2", "err_H1", "err_H2", "kappa", "rate_L2", "rate_H1", "rate_H2")


def write_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(
                ["" if r.get(c) is None else (r[c] if c in ("level", "n") else fmt(r[c])) for c in CSV_COLUMNS]
            )


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- sampling exports -----------------------------------------------------------------
def _pieces(kind: int):
    """Parametric grids per polynomial piece: one for regular faces, four otherwise."""
    if kind == 0:
        return [(0.0, 1.0, 0.0, 1.0)]
    return [(a, a + 0.5, b, b + 0.5) for b in (0.0, 0.5) for a in (0.0, 0.5)]


def sample_grid(space, geometry, m: int = 5, values=None):
    """Per-piece ``m x m`` samples of the geometry (and optional field).

    Returns ``(points, cells, field, piece_faces)`` with quad cells indexing
    into ``points``.
    """
    table = getattr(space, "table", space)
    pts, cells, vals, owner = [], [], [], []
    t = np.linspace(0.0, 1.0, m)
    base = 0
    for f in range(table.n_faces):
        for u0, u1, v0, v1 in _pieces(int(table.kind[f])):
            U, V = np.meshgrid(u0 + (u1 - u0) * t, v0 + (v1 - v0) * t, indexing="xy")
            u, v = U.ravel(), V.ravel()
            pts.append(eval_geometry(space, geometry, f, u, v, order=0).x)
            if values is not None:
                vals.append(eval_function(space, values, f, u, v)[0])
            for j in range(m - 1):
                for i in range(m - 1):
                    a = base + j * m + i
                    cells.append((a, a + 1, a + m + 1, a + m))
            base += m * m
            owner.append(f)
    P = np.concatenate(pts)
    F = np.concatenate(vals) if values is not None else None
    return P, np.array(cells, dtype=int), F, owner


def write_vtk(path, points, cells, field=None, name="f") -> None:
    P = np.asarray(points, dtype=float)
    if P.shape[1] == 2:
        P = np.hstack([P, np.zeros((len(P), 1))])
    lines = ["# vtk DataFile Version 3.0", "almostc1 sample", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {len(P)} double")
    lines += [" ".join(fmt(c) for c in p) for p in P]
    lines.append(f"CELLS {len(cells)} {5 * len(cells)}")
    lines += ["4 " + " ".join(str(int(i)) for i in c) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += ["9"] * len(cells)
    if field is not None:
        lines.append(f"POINT_DATA {len(P)}")
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [fmt(x) for x in np.asarray(field, dtype=float)]
    Path(path).write_text("\n".join(lines) + "\n")


def bezier_net(space, geometry):
    """Per-piece corner nets of the geometry (3x3 per Bernstein piece).

    Regular faces give one 3x3 net; C¹ faces are split at the knot into four
    Bernstein pieces.  Returns ``(points, quads)`` where every quad is one
    cell of a control net.
    """
    table = getattr(space, "table", space)
    X = getattr(geometry, "points", geometry)
    d = X.shape[1]
    pts, quads = [], []
    for f in range(table.n_faces):
        blk = (table.face_block(f) @ X).reshape(table.order(f), table.order(f), d)
        nets = [blk] if table.kind[f] == 0 else _split_c1(blk)
        for net in nets:
            base = len(pts)
            pts.extend(net.reshape(9, d))
            for j in range(2):
                for k in range(2):
                    a = base + j * 3 + k
                    quads.append((a, a + 3, a + 4, a + 1))
    return np.array(pts), quads


def _split_c1(blk: np.ndarray) -> list[np.ndarray]:
    """Bernstein nets of the four pieces of a C¹ biquadratic 4x4 spline block."""
    # C¹ quadratic spline on (0,0,0,1/2,1,1,1) to Bernstein on [0,1/2] and [1/2,1]
    S = np.array(
        [
            [[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0.5, 0.5, 0]],
            [[0, 0.5, 0.5, 0], [0, 0, 1.0, 0], [0, 0, 0, 1.0]],
        ]
    )
    out = []
    for b in (0, 1):
        for a in (0, 1):
            out.append(np.einsum("ij,kl,jl...->ik...", S[a], S[b], blk))
    return out

