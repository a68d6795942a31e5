"""Evaluation of basis functions, spline functions and geometry maps.

Everything here is vectorised over points on one face.  Derivative lists
follow :func:`almostc1.basis.tensor_basis`: value, then ``d/du``, ``d/dv``,
then ``d2/du2``, ``d2/dudv``, ``d2/dv2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import tensor_basis
from .errors import SingularJacobian


@dataclass(frozen=True)
class BasisProbe:
    face: int
    xi: tuple
    order: int = 0

    def __post_init__(self):
        u, v = self.xi
        if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
            raise ValueError(f"parametric point {self.xi} outside the unit square")
        if self.order not in (0, 1, 2):
            raise ValueError("derivative order must be 0, 1 or 2")


@dataclass(frozen=True)
class PhysicalFrame:
    """Geometry at a batch of points.

    ``x`` has shape (m, d), ``jac`` (m, d, 2) with ``jac[:, a, i] = dx_a/dxi_i``
    and ``hess`` (m, d, 3) holding ``x_uu, x_uv, x_vv``.
    """

    x: np.ndarray
    jac: np.ndarray | None = None
    hess: np.ndarray | None = None

    @property
    def det(self) -> np.ndarray:
        J = self.jac
        if J.shape[1] == 2:
            return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        n = np.cross(J[:, :, 0], J[:, :, 1])
        return np.linalg.norm(n, axis=1)


def eval_b1_basis(xi, order: int = 0) -> list[np.ndarray]:
    """The 16 C¹ tensor basis functions (and derivatives) at ``xi = (u, v)``.

    ``xi`` may be a single point or a pair of arrays.  Each returned array has
    shape (points, 16) with column ``j*4 + k``.
    """
    u, v = xi
    return tensor_basis(1, u, v, order)


def eval_basis(space, face: int, u, v, order: int = 0):
    """Active dofs of ``face`` and their parametric values/derivatives."""
    table = getattr(space, "table", space)
    return table.basis_values(face, u, v, order)


def eval_function(space, values, face: int, u, v, order: int = 0) -> list[np.ndarray]:
    table = getattr(space, "table", space)
    return table.evaluate(np.asarray(values, dtype=float), face, u, v, order)


def eval_geometry(space, geometry, face: int, u, v, order: int = 1) -> PhysicalFrame:
    pts = getattr(geometry, "points", geometry)
    out = eval_function(space, pts, face, u, v, order)
    x = out[0]
    jac = np.stack([out[1], out[2]], axis=-1) if order >= 1 else None
    hess = np.stack(out[3:6], axis=-1) if order >= 2 else None
    return PhysicalFrame(x, jac, hess)


def check_jacobian(frame: PhysicalFrame, scale: float = 1.0):
    det = frame.det
    if np.any(np.abs(det) < 1e-14 * scale * scale):
        raise SingularJacobian("geometry Jacobian is singular")
    return det


def physical_derivatives(frame: PhysicalFrame, grads, hessians=None):
    """Physical gradients and Hessians of planar functions.

    Parameters
    ----------
    frame : PhysicalFrame
        Planar geometry (d = 2); ``hess`` is needed when ``hessians`` is given.
    grads : (m, 2, k) array
        Parametric gradients ``(f_u, f_v)`` of ``k`` functions at ``m`` points.
    hessians : (m, 3, k) array, optional
        Parametric second derivatives ``(f_uu, f_uv, f_vv)``.

    Returns
    -------
    grad : (m, 2, k) array
        ``(f_x, f_y)``.
    hess : (m, 3, k) array or None
        ``(f_xx, f_xy, f_yy)``.
    """
    J = frame.jac
    if J is None or J.shape[1] != 2:
        raise ValueError("physical derivatives need a planar frame with a Jacobian")
    check_jacobian(frame)
    grads = np.asarray(grads, dtype=float)
    # grad_xi f = J^T grad_x f
    g = np.linalg.solve(np.transpose(J, (0, 2, 1)), grads)
    if hessians is None:
        return g, None
    H = frame.hess  # (m, 2, 3)
    rhs = np.asarray(hessians, dtype=float) - np.einsum("mai,mak->mik", H, g)
    pairs = ((0, 0), (0, 1), (1, 1))
    A = np.empty((len(J), 3, 3))
    for r, (i, j) in enumerate(pairs):
        A[:, r, 0] = J[:, 0, i] * J[:, 0, j]
        A[:, r, 1] = J[:, 0, i] * J[:, 1, j] + J[:, 1, i] * J[:, 0, j]
        A[:, r, 2] = J[:, 1, i] * J[:, 1, j]
    return g, np.linalg.solve(A, rhs)


def sample_face(space, geometry, face: int, m: int = 5, values=None):
    """Points (and optional scalar field) on an ``m x m`` grid of one face."""
    t = np.linspace(0.0, 1.0, m)
    U, V = np.meshgrid(t, t, indexing="xy")
    u, v = U.ravel(), V.ravel()
    x = eval_geometry(space, geometry, face, u, v, order=0).x
    f = None if values is None else eval_function(space, values, face, u, v)[0]
    return x, f


def edge_param(l: int, t):
    """Parametric points on local edge ``l``, running from ``f[l]`` to ``f[l+1]``."""
    t = np.asarray(t, dtype=float)
    if l == 0:
        return t, np.zeros_like(t)
    if l == 1:
        return np.ones_like(t), t
    if l == 2:
        return 1.0 - t, np.ones_like(t)
    if l == 3:
        return np.zeros_like(t), 1.0 - t
    raise ValueError("local edge index must be 0..3")


def edge_jumps(space, geometry, values, edge: int, m: int = 11):
    """Value and physical-gradient jumps across an interior edge.

    Returns the largest absolute value jump and the largest gradient jump at
    ``m`` points strictly inside the edge.  The geometry must be planar.
    """
    mesh = space.mesh
    adj = mesh.edge_faces[edge]
    if len(adj) != 2:
        raise ValueError("edge_jumps needs an interior edge")
    t = (np.arange(m) + 0.5) / m
    vals, grads = [], []
    for f in adj:
        l = int(np.flatnonzero(mesh.face_edges[f] == edge)[0])
        a = mesh.faces[f][l]
        tt = t if a == mesh.edges[edge][0] else 1.0 - t
        u, v = edge_param(l, tt)
        frame = eval_geometry(space, geometry, f, u, v, order=1)
        out = eval_function(space, values, f, u, v, order=1)
        g, _ = physical_derivatives(frame, np.stack([out[1], out[2]], axis=1)[..., None])
        vals.append(out[0])
        grads.append(g[..., 0])
    return float(np.abs(vals[0] - vals[1]).max()), float(np.abs(grads[0] - grads[1]).max())
