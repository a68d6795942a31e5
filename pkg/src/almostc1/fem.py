"""Galerkin solution of the Poisson and biharmonic model problems.

Element matrices are computed for all faces of one kind at once and scattered
through the extraction operator: with ``D`` the block-diagonal matrix of
element-slot matrices, the global matrix is ``E^T D E``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import tensor_basis
from .errors import (
    NoConvergence,
    SingularBoundaryMass,
    SingularJacobian,
    SingularMass,
    SolverBreakdown,
)
from .evaluation import edge_param
from .space import SplineSpace

PI = math.pi


# -- manufactured solution ---------------------------------------------------------
@dataclass(frozen=True)
class Exact:
    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray  # (m, 3): f_xx, f_xy, f_yy
    laplacian: np.ndarray
    bilaplacian: np.ndarray


def manufactured_solution(points) -> Exact:
    """``sin(pi x + pi/3) sin(pi y + pi/5)`` and its derivatives."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    a = PI * P[:, 0] + PI / 3
    b = PI * P[:, 1] + PI / 5
    sa, ca, sb, cb = np.sin(a), np.cos(a), np.sin(b), np.cos(b)
    f = sa * sb
    grad = PI * np.stack([ca * sb, sa * cb], axis=1)
    hess = PI**2 * np.stack([-f, ca * cb, -f], axis=1)
    return Exact(f, grad, hess, -2 * PI**2 * f, 4 * PI**4 * f)


# -- quadrature ---------------------------------------------------------------------
@dataclass(frozen=True)
class QuadratureRule:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray


def gauss_1d(q: int, pieces: int = 1):
    x, w = np.polynomial.legendre.leggauss(q)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    pts = np.concatenate([(i + x) / pieces for i in range(pieces)])
    wts = np.concatenate([w / pieces for _ in range(pieces)])
    return pts, wts


def quadrature_rule(kind: int, q: int = 4) -> QuadratureRule:
    """Tensor Gauss rule per polynomial piece (1 piece, or 2x2 for C¹ faces)."""
    if q < 1:
        raise ValueError("quadrature order must be positive")
    t, w = gauss_1d(q, 1 if kind == 0 else 2)
    U, Vv = np.meshgrid(t, t, indexing="ij")
    W = np.outer(w, w)
    return QuadratureRule(U.ravel(), Vv.ravel(), W.ravel())


# -- batched element kernels -----------------------------------------------------
@dataclass
class _Batch:
    faces: np.ndarray
    rows: np.ndarray  # (F, nb) global slot rows
    w: np.ndarray  # (F, Q) weights times |det J|
    x: np.ndarray  # (F, Q, 2)
    N: np.ndarray  # (Q, nb)
    grad: np.ndarray | None = None  # (F, Q, 2, nb)
    hess: np.ndarray | None = None  # (F, Q, 3, nb)


def _batches(space, X: np.ndarray, q: int, order: int, parametric: bool = False):
    table = getattr(space, "table", space)
    Y = None if parametric else table.E @ X
    for kind in (0, 1):
        faces = np.flatnonzero(table.kind == kind)
        if len(faces) == 0:
            continue
        nb = 9 if kind == 0 else 16
        rule = quadrature_rule(kind, q)
        B = tensor_basis(kind, rule.u, rule.v, 2 if order >= 2 else max(order, 1))
        rows = table.offset[faces][:, None] + np.arange(nb)
        if parametric:
            F, Q = len(faces), len(rule.w)
            x = np.broadcast_to(np.stack([rule.u, rule.v], axis=1), (F, Q, 2))
            yield _Batch(faces, rows, np.broadcast_to(rule.w, (F, Q)), x, B[0])
            continue
        G = Y[rows]  # (F, nb, 2)
        x = np.einsum("qn,fnd->fqd", B[0], G)
        J = np.stack(
            [np.einsum("qn,fnd->fqd", B[1], G), np.einsum("qn,fnd->fqd", B[2], G)], axis=-1
        )  # (F, Q, d, 2)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        scale = max(1.0, float(np.abs(G).max()))
        if np.any(det <= 1e-14 * scale * scale):
            raise SingularJacobian("non-positive Jacobian determinant at a quadrature point")
        batch = _Batch(faces, rows, rule.w[None, :] * det, x, B[0])
        if order >= 1:
            dN = np.stack([B[1], B[2]], axis=1)  # (Q, 2, nb)
            JT = np.swapaxes(J, -1, -2)
            rhs = np.broadcast_to(dN, JT.shape[:2] + dN.shape[1:])
            g = np.linalg.solve(JT, rhs)
            batch.grad = g
            if order >= 2:
                Hx = np.stack([np.einsum("qn,fnd->fqd", B[k], G) for k in (3, 4, 5)], axis=-1)
                HN = np.stack([B[3], B[4], B[5]], axis=1)  # (Q, 3, nb)
                rhs = HN[None] - np.einsum("fqai,fqak->fqik", Hx, g)
                A = np.empty(J.shape[:2] + (3, 3))
                for r, (i, j) in enumerate(((0, 0), (0, 1), (1, 1))):
                    A[..., r, 0] = J[..., 0, i] * J[..., 0, j]
                    A[..., r, 1] = J[..., 0, i] * J[..., 1, j] + J[..., 1, i] * J[..., 0, j]
                    A[..., r, 2] = J[..., 1, i] * J[..., 1, j]
                batch.hess = np.linalg.solve(A, rhs)
        yield batch


def _scatter(table, blocks) -> sp.csr_matrix:
    """``E^T D E`` for element-slot blocks [(rows (F, nb), mats (F, nb, nb))]."""
    r, c, v = [], [], []
    for rows, mats in blocks:
        nb = rows.shape[1]
        r.append(np.repeat(rows, nb, axis=1).ravel())
        c.append(np.tile(rows, (1, nb)).ravel())
        v.append(mats.ravel())
    n = table.E.shape[0]
    D = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(n, n))
    D = 0.5 * (D + D.T)
    A = (table.E.T @ D @ table.E).tocsr()
    L = sp.tril(A, format="csr")
    return (L + sp.tril(A, -1, format="csr").T).tocsr()


def assemble(space, geometry, form: str = "stiffness", q: int = 4) -> sp.csr_matrix:
    """Mass, stiffness or bilaplace matrix on a planar geometry."""
    table = getattr(space, "table", space)
    X = getattr(geometry, "points", geometry)
    order = {"mass": 0, "stiffness": 1, "bilaplace": 2}[form]
    blocks = []
    for b in _batches(table, X, q, order):
        if form == "mass":
            mats = np.einsum("fq,qa,qb->fab", b.w, b.N, b.N)
        elif form == "stiffness":
            mats = np.einsum("fq,fqia,fqib->fab", b.w, b.grad, b.grad)
        else:
            lap = b.hess[:, :, 0] + b.hess[:, :, 2]
            mats = np.einsum("fq,fqa,fqb->fab", b.w, lap, lap)
        blocks.append((b.rows, mats))
    return _scatter(table, blocks)


def load_vector(space, geometry, f: Callable, q: int = 4) -> np.ndarray:
    """``b_i = integral of B_i f`` for a callable ``f(points) -> values``."""
    table = getattr(space, "table", space)
    X = getattr(geometry, "points", geometry)
    slot = np.zeros(table.E.shape[0])
    for b in _batches(table, X, q, 0):
        vals = np.asarray(f(b.x.reshape(-1, 2))).reshape(b.w.shape)
        np.add.at(slot, b.rows, np.einsum("fq,qa->fa", b.w * vals, b.N))
    return table.E.T @ slot


# -- boundary -------------------------------------------------------------------------
@dataclass
class BoundaryData:
    dofs: list  # per boundary edge: active dof indices
    values: list  # (Q, na)
    dnormal: list  # (Q, na)
    weights: list  # (Q,) with line element
    points: list  # (Q, 2)
    normals: list  # (Q, 2)


def boundary_data(space, geometry, q: int = 4) -> BoundaryData:
    table = space.table
    mesh = space.mesh
    X = geometry.points
    out = BoundaryData([], [], [], [], [], [])
    for e in sorted(mesh.classification.boundary_edges):
        f = mesh.edge_faces[e][0]
        l = int(np.flatnonzero(mesh.face_edges[f] == e)[0])
        kind = int(table.kind[f])
        t, w = gauss_1d(q, 1 if kind == 0 else 2)
        u, v = edge_param(l, t)
        act, (N, Nu, Nv) = table.basis_values(f, u, v, 1)
        blk = table.face_block(f)
        G = (blk @ X).reshape(-1, 2)
        B = tensor_basis(kind, u, v, 1)
        x, xu, xv = (Bk @ G for Bk in B)
        tan = [xu, xv, -xu, -xv][l]
        ln = np.linalg.norm(tan, axis=1)
        nrm = np.stack([tan[:, 1], -tan[:, 0]], axis=1) / ln[:, None]
        J = np.stack([xu, xv], axis=-1)  # (Q, 2, 2)
        g = np.linalg.solve(np.swapaxes(J, 1, 2), np.stack([Nu, Nv], axis=1))
        out.dofs.append(act)
        out.values.append(N)
        out.dnormal.append(np.einsum("qi,qia->qa", nrm, g))
        out.weights.append(w * ln)
        out.points.append(x)
        out.normals.append(nrm)
    return out


def _boundary_matrix(n, bd: BoundaryData, which: str):
    r, c, v = [], [], []
    for act, N, w in zip(bd.dofs, getattr(bd, which), bd.weights):
        M = np.einsum("q,qa,qb->ab", w, N, N)
        r.append(np.repeat(act, len(act)))
        c.append(np.tile(act, len(act)))
        v.append(M.ravel())
    return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(n, n))


def _boundary_rhs(n, bd: BoundaryData, which: str, data: list):
    b = np.zeros(n)
    for act, N, w, g in zip(bd.dofs, getattr(bd, which), bd.weights, data):
        np.add.at(b, act, np.einsum("q,qa->a", w * g, N))
    return b


def _support(M: sp.spmatrix) -> np.ndarray:
    d = M.diagonal()
    return np.flatnonzero(d > 1e-13 * max(d.max(initial=0.0), 1e-300))


def boundary_value_projection(space, geometry, g: Callable, q: int = 4, bd=None):
    """L² projection of ``g`` onto the boundary traces.

    Returns ``(f0, trace)``: a full coefficient vector that is zero off the
    trace dofs, and the indices of the dofs with non-zero boundary trace.
    """
    bd = bd or boundary_data(space, geometry, q)
    n = space.n_dofs
    M = _boundary_matrix(n, bd, "values")
    trace = _support(M)
    rhs = _boundary_rhs(n, bd, "values", [np.asarray(g(p)) for p in bd.points])
    try:
        lu = spla.splu(sp.csc_matrix(M[trace][:, trace]))
        sol = lu.solve(rhs[trace])
    except RuntimeError as exc:
        raise SingularBoundaryMass(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularBoundaryMass("boundary mass matrix is singular")
    f0 = np.zeros(n)
    f0[trace] = sol
    return f0, trace


@dataclass
class LayerProjection:
    coeffs: np.ndarray
    layer: np.ndarray
    rank: int


def boundary_normal_projection(space, geometry, f0, gn: Callable, trace, q: int = 4, bd=None):
    """Fit normal derivatives on the boundary with the dof layer next to it.

    The layer is every dof with a non-zero normal derivative on the boundary
    that is not a trace dof.  The Galerkin system is solved in the
    minimum-norm least-squares sense; its numerical rank is reported.
    """
    bd = bd or boundary_data(space, geometry, q)
    n = space.n_dofs
    N = _boundary_matrix(n, bd, "dnormal")
    layer = np.setdiff1d(_support(N), trace)
    data = []
    for act, dn, p, nrm in zip(bd.dofs, bd.dnormal, bd.points, bd.normals):
        have = dn @ f0[act]
        data.append(np.einsum("qi,qi->q", np.asarray(gn(p)), nrm) - have)
    rhs = _boundary_rhs(n, bd, "dnormal", data)
    A = N[layer][:, layer].toarray()
    sol, _, rank, _ = np.linalg.lstsq(A, rhs[layer], rcond=1e-12)
    out = f0.copy()
    out[layer] = sol
    return LayerProjection(out, layer, int(rank))


# -- solve ---------------------------------------------------------------------------
@dataclass
class DiscreteSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    free: np.ndarray

    def reduced(self):
        A = self.matrix
        full = np.zeros(A.shape[0])
        full[self.fixed] = self.fixed_values
        b = self.rhs - A @ full
        return A[self.free][:, self.free].tocsc(), b[self.free]


@dataclass
class SolveResult:
    coeffs: np.ndarray
    system: DiscreteSystem
    residual: float
    kappa: float | None = None
    errors: tuple | None = None
    layer_rank: int | None = None


def _factor(A):
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SolverBreakdown(str(exc)) from exc
    return lu


def build_system(
    space, geometry, problem: str = "p1", q: int = 4, exact: Callable = manufactured_solution
) -> tuple[DiscreteSystem, int | None]:
    """Stiffness or bilaplace system with boundary data taken from ``exact``."""
    problem = problem.lower()
    if problem not in ("p1", "p2"):
        raise ValueError(f"unknown problem {problem!r}")
    if problem == "p2" and not isinstance(space, SplineSpace):
        raise ValueError("the biharmonic problem needs the almost-C1 space")
    if problem == "p2" and space.mesh.classification.extraordinary_vertices and not space.ev:
        raise ValueError("the biharmonic problem needs extraordinary-vertex splines")
    bd = boundary_data(space, geometry, q)
    f0, trace = boundary_value_projection(space, geometry, lambda p: exact(p).value, q, bd)
    rank = None
    if problem == "p1":
        A = assemble(space, geometry, "stiffness", q)
        b = load_vector(space, geometry, lambda p: -exact(p).laplacian, q)
        fixed, vals = trace, f0[trace]
    else:
        lp = boundary_normal_projection(
            space, geometry, f0, lambda p: exact(p).grad, trace, q, bd
        )
        rank = lp.rank
        A = assemble(space, geometry, "bilaplace", q)
        b = load_vector(space, geometry, lambda p: exact(p).bilaplacian, q)
        fixed = np.union1d(trace, lp.layer)
        vals = lp.coeffs[fixed]
    free = np.setdiff1d(np.arange(space.n_dofs), fixed)
    return DiscreteSystem(A, b, fixed, vals, free), rank


def solve_system(system: DiscreteSystem, cond: bool = False):
    A, b = system.reduced()
    lu = _factor(A)
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        d = A.diagonal()
        M = spla.LinearOperator(A.shape, matvec=lambda r: r / d, dtype=float)
        x, info = spla.cg(A, b, rtol=1e-12, maxiter=10 * A.shape[0], M=M)
        if info != 0:
            raise SolverBreakdown("direct solve failed and CG did not converge")
    res = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300))
    full = np.zeros(system.matrix.shape[0])
    full[system.fixed] = system.fixed_values
    full[system.free] = x
    kappa = condition_number(A, lu) if cond else None
    return full, res, kappa


def solve_problem(
    space, geometry, problem: str = "p1", q: int = 4, cond: bool = False,
    exact: Callable = manufactured_solution,
) -> SolveResult:
    system, rank = build_system(space, geometry, problem, q, exact)
    coeffs, res, kappa = solve_system(system, cond)
    errs = error_norms(space, geometry, coeffs, exact, q)
    return SolveResult(coeffs, system, res, kappa, errs, rank)


def condition_number(A, lu=None, tol: float = 1e-6, maxiter: int | None = None) -> float:
    """Spectral condition number of an SPD matrix.

    The largest eigenvalue comes from Lanczos iteration on ``A``, the smallest
    from Lanczos iteration on ``A^{-1}`` applied through the factorisation.
    """
    A = sp.csc_matrix(A)
    n = A.shape[0]
    if n == 1:
        return 1.0
    if n <= 200:
        ev = np.linalg.eigvalsh(A.toarray())
        if ev[0] <= 0:
            raise SolverBreakdown("matrix is not positive definite")
        return float(ev[-1] / ev[0])
    lu = lu or _factor(A)
    maxiter = maxiter or 50 * n
    Ainv = spla.LinearOperator(A.shape, matvec=lu.solve, dtype=float)
    try:
        lmax = spla.eigsh(A, k=1, which="LA", tol=tol, maxiter=maxiter, return_eigenvectors=False)[0]
        lmin = spla.eigsh(
            A, k=1, sigma=0.0, which="LM", OPinv=Ainv, tol=tol, maxiter=maxiter,
            return_eigenvectors=False,
        )[0]
    except spla.ArpackNoConvergence as exc:
        raise NoConvergence(str(exc)) from exc
    if lmin <= 0:
        raise SolverBreakdown("matrix is not positive definite")
    return float(lmax / lmin)


def error_norms(space, geometry, coeffs, exact: Callable = manufactured_solution, q: int = 4):
    """``(L2, H1, H2)`` norms of ``f_h - f_exact`` (full norms, nested)."""
    table = space.table
    X = geometry.points
    Y = table.E @ np.asarray(coeffs, dtype=float)
    s0 = s1 = s2 = 0.0
    for b in _batches(table, X, q, 2):
        c = Y[b.rows]  # (F, nb)
        val = np.einsum("qa,fa->fq", b.N, c)
        grad = np.einsum("fqia,fa->fqi", b.grad, c)
        hess = np.einsum("fqia,fa->fqi", b.hess, c)
        ex = exact(b.x.reshape(-1, 2))
        F, Q = b.w.shape
        e0 = val - ex.value.reshape(F, Q)
        e1 = grad - ex.grad.reshape(F, Q, 2)
        e2 = hess - ex.hess.reshape(F, Q, 3)
        s0 += float(np.sum(b.w * e0**2))
        s1 += float(np.sum(b.w * np.sum(e1**2, axis=-1)))
        # the mixed derivative appears twice in the Frobenius norm
        s2 += float(np.sum(b.w * (e2[..., 0] ** 2 + 2 * e2[..., 1] ** 2 + e2[..., 2] ** 2)))
    return math.sqrt(s0), math.sqrt(s0 + s1), math.sqrt(s0 + s1 + s2)


# -- geometry fitting -----------------------------------------------------------------
def fit_geometry(space, target: Callable, q: int = 4) -> np.ndarray:
    """L² fit in the parametric measure of a target ``target(face, u, v) -> (m, d)``."""
    table = getattr(space, "table", space)
    blocks, slot = [], None
    for b in _batches(table, None, q, 0, parametric=True):
        mats = np.einsum("fq,qa,qb->fab", b.w, b.N, b.N)
        blocks.append((b.rows, mats))
        u, v = b.x[0, :, 0], b.x[0, :, 1]
        vals = np.stack([np.asarray(target(int(f), u, v), dtype=float) for f in b.faces])
        if slot is None:
            slot = np.zeros((table.E.shape[0],) + vals.shape[2:])
        np.add.at(slot, b.rows, np.einsum("fq,qa,fq...->fa...", b.w, b.N, vals))
    M = _scatter(table, blocks)
    rhs = table.E.T @ slot
    try:
        lu = spla.splu(sp.csc_matrix(M))
    except RuntimeError as exc:
        raise SingularMass(str(exc)) from exc
    sol = lu.solve(rhs)
    if not np.all(np.isfinite(sol)):
        raise SingularMass("mass matrix is singular")
    return sol


# -- studies --------------------------------------------------------------------------
@dataclass
class ConvergenceRecord:
    levels: list = field(default_factory=list)
    n: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # (L2, H1, H2)
    kappa: list = field(default_factory=list)

    def rates(self) -> np.ndarray:
        """Observed orders w.r.t. ``n^(-1/2)`` for consecutive levels, (L-1, 3)."""
        e = np.asarray(self.errors, dtype=float)
        n = np.asarray(self.n, dtype=float)
        h = n ** -0.5
        return np.log(e[1:] / e[:-1]) / np.log(h[1:] / h[:-1])[:, None]

    def kappa_slope(self, start: int = 0) -> float:
        k = np.asarray(self.kappa[start:], dtype=float)
        n = np.asarray(self.n[start:], dtype=float)
        return float(np.polyfit(np.log(n), np.log(k), 1)[0])

    def rows(self) -> list[dict]:
        r = self.rates()
        out = []
        for i, lev in enumerate(self.levels):
            row = {
                "level": lev,
                "n": self.n[i],
                "err_L2": self.errors[i][0],
                "err_H1": self.errors[i][1],
                "err_H2": self.errors[i][2],
                "kappa": self.kappa[i] if self.kappa else None,
            }
            for j, name in enumerate(("rate_L2", "rate_H1", "rate_H2")):
                row[name] = r[i - 1, j] if i > 0 else None
            out.append(row)
        return out


def convergence_study(
    mesh,
    problem: str = "p1",
    levels: int = 3,
    q: int = 4,
    cond: bool = False,
    x_star=None,
    mode: str = "geometric",
    triangle: str = "boundary-adapted",
    offset: int = 1,
) -> ConvergenceRecord:
    """Solve on ``levels + 1`` successive refinements.

    Level ``i`` uses ``i + offset`` refinements of the coarse triple built
    from ``mesh`` (``offset = 1`` matches the dof counts of the disk study).
    """
    from .refine import refine_geometry
    from .space import build_space

    space, geo = build_space(mesh, x_star, mode=mode, triangle=triangle)
    for _ in range(offset):
        mesh, space, geo = refine_geometry(mesh, space, geo)
    rec = ConvergenceRecord()
    for lev in range(levels + 1):
        if lev > 0:
            mesh, space, geo = refine_geometry(mesh, space, geo)
        res = solve_problem(space, geo, problem, q, cond)
        rec.levels.append(lev)
        rec.n.append(space.n_dofs)
        rec.errors.append(res.errors)
        if cond:
            rec.kappa.append(res.kappa)
    return rec
