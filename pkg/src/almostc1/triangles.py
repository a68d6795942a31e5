"""Control triangles in the tangent plane of an extraordinary vertex.

The minimal-area enclosing triangle of a convex polygon has at least one side
flush with a polygon edge.  For a fixed base line, each of the two remaining
sides is either flush with an edge or touches the polygon at its own
midpoint (otherwise rotating it about the contact point shrinks the area).
Enumerating these candidates for every hull edge gives an exact solver that
is cheap for the small point clouds met here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from .errors import CollinearPoints, DegenerateTriangle

SLACK = 1e-6


@dataclass(frozen=True)
class ControlTriangle:
    vertices: np.ndarray  # (3, 2)

    @property
    def area(self) -> float:
        return _area(self.vertices)


def _area(T) -> float:
    a, b, c = np.asarray(T, dtype=float)
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def barycentric(triangle, point) -> np.ndarray:
    """Barycentric coordinates of one point or an (m, 2) array of points."""
    T = np.asarray(getattr(triangle, "vertices", triangle), dtype=float)
    M = np.array([[T[0, 0], T[1, 0], T[2, 0]], [T[0, 1], T[1, 1], T[2, 1]], [1.0, 1.0, 1.0]])
    scale = max(float(np.abs(T - T.mean(axis=0)).max()), 1e-300)
    if abs(np.linalg.det(M)) < 1e-14 * scale * scale:
        raise DegenerateTriangle("control triangle has zero area")
    P = np.atleast_2d(np.asarray(point, dtype=float))
    rhs = np.vstack([P.T, np.ones(len(P))])
    lam = np.linalg.solve(M, rhs).T
    return lam[0] if np.ndim(point) == 1 else lam


def _hull(points) -> np.ndarray:
    P = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(P) < 3:
        raise CollinearPoints("fewer than three distinct points")
    centred = P - P.mean(axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise CollinearPoints("points are collinear")
    hull = ConvexHull(P)
    return P[hull.vertices]  # counter-clockwise


def _intersect(p1, d1, p2, d2):
    A = np.array([[d1[0], -d2[0]], [d1[1], -d2[1]]])
    det = np.linalg.det(A)
    if abs(det) < 1e-14:
        return None
    t = np.linalg.solve(A, p2 - p1)
    return p1 + t[0] * d1


def _fixed_base(H: np.ndarray, tol: float):
    """Smallest triangle with base on y = 0 containing H (all y >= 0).

    Returns (area, triangle) or None.
    """
    h = len(H)
    top = H[:, 1].max()
    if top <= tol:
        return None
    # candidate side lines as (point, direction); left sides go up-right
    # from the base towards the apex, right sides go up-left.
    flush = []
    for i in range(h):
        a, b = H[i], H[(i + 1) % h]
        d = b - a
        if abs(d[1]) > tol:
            flush.append((a, d / np.linalg.norm(d)))
    best = None

    def consider(T):
        nonlocal best
        if T is None:
            return
        T = np.asarray(T)
        if not np.all(np.isfinite(T)):
            return
        ar = _area(T)
        if ar <= tol or (best is not None and ar >= best[0]):
            return
        lam = barycentric(T, H)
        if lam.min() < -1e-9:
            return
        best = (ar, T)

    def tri(l1, l2):
        p1, d1 = l1
        p2, d2 = l2
        apex = _intersect(p1, d1, p2, d2)
        b1 = _intersect(p1, d1, np.zeros(2), np.array([1.0, 0.0]))
        b2 = _intersect(p2, d2, np.zeros(2), np.array([1.0, 0.0]))
        if apex is None or b1 is None or b2 is None or apex[1] <= tol:
            return None
        return np.array([b1, b2, apex])

    for l1 in flush:
        for l2 in flush:
            consider(tri(l1, l2))
    # one flush side, the other touching vertex w at its midpoint:
    # the far end q = 2w - (b, 0) must lie on the flush line (p, d)
    for p, d in flush:
        nrm = np.array([-d[1], d[0]])
        for w in H:
            if w[1] <= tol:
                continue
            # nrm . (2w - (b,0) - p) = 0  ->  b = (nrm.(2w - p)) / nrm_x
            if abs(nrm[0]) < 1e-14:
                continue
            b = float(nrm @ (2 * w - p)) / nrm[0]
            q = np.array([2 * w[0] - b, 2 * w[1]])
            base = np.array([b, 0.0])
            consider(tri((p, d), (base, q - base)))
    # both sides at midpoints: apex height 2*w_y, area constant along the
    # family, so one member per pair of equal-height vertices suffices
    for i in range(h):
        for j in range(h):
            v, w = H[i], H[j]
            if i == j or v[1] <= tol or abs(v[1] - w[1]) > tol:
                continue
            for a in (v[0], w[0], 0.5 * (v[0] + w[0])):
                apex = np.array([a, 2 * v[1]])
                consider(np.array([[2 * v[0] - a, 0.0], [2 * w[0] - a, 0.0], apex]))
    return best


def _rotation_to_base(a, b, H):
    """Rigid map sending line (a, b) to y = 0 with the hull above it."""
    d = (b - a) / np.linalg.norm(b - a)
    R = np.array([[d[0], d[1]], [-d[1], d[0]]])
    Y = (H - a) @ R.T
    if Y[:, 1].sum() < 0:
        R = np.array([[1.0, 0.0], [0.0, -1.0]]) @ R
    return R


def enclosing_triangle_on_line(points, a, b) -> np.ndarray:
    """Smallest triangle containing ``points`` with one side on line ``ab``."""
    H = _hull(points)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    R = _rotation_to_base(a, b, H)
    Y = (H - a) @ R.T
    scale = float(np.abs(Y).max())
    Y[:, 1] = np.where(np.abs(Y[:, 1]) < 1e-12 * scale, 0.0, Y[:, 1])
    if Y[:, 1].min() < -1e-9 * scale:
        raise CollinearPoints("points lie on both sides of the base line")
    res = _fixed_base(Y, 1e-12 * scale)
    if res is None:
        raise CollinearPoints("no enclosing triangle on the given line")
    return res[1] @ R + a


def min_area_triangle(points) -> np.ndarray:
    H = _hull(points)
    best = None
    for i in range(len(H)):
        a, b = H[i], H[(i + 1) % len(H)]
        T = enclosing_triangle_on_line(H, a, b)
        ar = _area(T)
        if best is None or ar < best[0] - 1e-15 * ar:
            best = (ar, T)
    return best[1]


def control_triangle(points, strategy: str = "min-area", base=None) -> ControlTriangle:
    """Control triangle around the projected corner coefficients.

    Parameters
    ----------
    points : (m, 2) array
    strategy : {"min-area", "boundary-adapted"}
        ``boundary-adapted`` puts one side on the line through the two
        points in ``base`` (the boundary direction at a boundary vertex);
        without ``base`` it falls back to ``min-area``.
    base : pair of points, optional
    """
    P = np.asarray(points, dtype=float)
    if strategy == "boundary-adapted" and base is not None:
        T = enclosing_triangle_on_line(P, base[0], base[1])
        m = 0.5 * (T[0] + T[1])
        T = m + (1.0 + SLACK) * (T - m)
    elif strategy in ("min-area", "boundary-adapted"):
        T = min_area_triangle(P)
        c = T.mean(axis=0)
        T = c + (1.0 + SLACK) * (T - c)
    else:
        raise ValueError(f"unknown triangle strategy {strategy!r}")
    e1, e2 = T[1] - T[0], T[2] - T[0]
    if e1[0] * e2[1] - e1[1] * e2[0] < 0:
        T = T[[0, 2, 1]]
    return ControlTriangle(T)
