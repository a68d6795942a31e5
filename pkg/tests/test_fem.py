import math
import time

import numpy as np
import pytest
import scipy.sparse as sp

from almostc1.evaluation import eval_function, eval_geometry
from almostc1.fem import (
    Exact,
    assemble,
    boundary_normal_projection,
    boundary_value_projection,
    build_system,
    condition_number,
    convergence_study,
    error_norms,
    fit_geometry,
    load_vector,
    manufactured_solution,
    quadrature_rule,
    solve_problem,
)
from almostc1.mesh import disk_mesh, mixed_mesh, structured_grid
from almostc1.refine import refine_geometry
from almostc1.space import build_space

PI = math.pi


def linear(a, b, c):
    def exact(points):
        P = np.atleast_2d(points)
        z = np.zeros(len(P))
        return Exact(a + b * P[:, 0] + c * P[:, 1], np.tile([b, c], (len(P), 1)), np.zeros((len(P), 3)), z, z)

    return exact


def test_manufactured_values():
    ex = manufactured_solution([[0.0, 0.0]])
    assert ex.value[0] == pytest.approx(math.sin(PI / 3) * math.sin(PI / 5))
    assert ex.value[0] == pytest.approx(0.509037, abs=1e-6)


def test_manufactured_derivatives(rng):
    P = rng.uniform(-1, 1, (10, 2))
    ex = manufactured_solution(P)
    h = 1e-4
    f = lambda Q: manufactured_solution(Q).value  # noqa: E731
    ex_, ey_ = np.array([h, 0]), np.array([0, h])
    fxx = (f(P + ex_) - 2 * f(P) + f(P - ex_)) / h**2
    fyy = (f(P + ey_) - 2 * f(P) + f(P - ey_)) / h**2
    fxy = (f(P + ex_ + ey_) - f(P + ex_ - ey_) - f(P - ex_ + ey_) + f(P - ex_ - ey_)) / (4 * h * h)
    assert np.allclose(ex.hess, np.stack([fxx, fxy, fyy], 1), atol=1e-5)
    assert np.allclose(ex.laplacian, -2 * PI**2 * ex.value, atol=1e-12)
    assert np.allclose(ex.bilaplacian, 4 * PI**4 * ex.value, atol=1e-10)
    g = np.stack([(f(P + ex_) - f(P - ex_)) / (2 * h), (f(P + ey_) - f(P - ey_)) / (2 * h)], 1)
    assert np.allclose(ex.grad, g, atol=1e-6)


@pytest.mark.parametrize("kind", [0, 1])
def test_quadrature_rule(kind):
    r = quadrature_rule(kind, 4)
    assert np.all(r.w > 0) and r.w.sum() == pytest.approx(1.0, abs=1e-15)
    assert len(r.w) == 16 * (1 if kind == 0 else 4)
    with pytest.raises(ValueError):
        quadrature_rule(0, 0)


def test_mass_q4_matches_q6(mixed):
    _, space, geo = mixed
    M4 = assemble(space, geo, "mass", 4)
    M6 = assemble(space, geo, "mass", 6)
    assert abs(M4 - M6).max() < 1e-12 * abs(M6).max()


@pytest.mark.parametrize("form", ["mass", "stiffness", "bilaplace"])
def test_exact_symmetry(disk5, form):
    _, space, geo = disk5
    A = assemble(space, geo, form)
    assert (A != A.T).nnz == 0


def test_mass_area_and_stiffness_constants(mixed):
    _, space, geo = mixed
    M = assemble(space, geo, "mass")
    assert M.sum() == pytest.approx(16.0, rel=1e-12)
    K = assemble(space, geo, "stiffness")
    assert np.abs(K @ np.ones(space.n_dofs)).max() < 1e-12 * abs(K).max()


@pytest.mark.parametrize("fixture", ["grid4", "disk5", "mixed"])
def test_bilaplace_annihilates_linears(fixture, request):
    _, space, geo = request.getfixturevalue(fixture)
    B = assemble(space, geo, "bilaplace")
    for col in (geo.points[:, 0], geo.points[:, 1], np.ones(space.n_dofs)):
        assert np.linalg.norm(B @ col) < 1e-10 * abs(B).max()


def test_load_vector_constant(mixed):
    _, space, geo = mixed
    b = load_vector(space, geo, lambda p: np.ones(len(p)))
    M = assemble(space, geo, "mass")
    assert np.allclose(b, M @ np.ones(space.n_dofs), atol=1e-13)


def test_boundary_projection_constant_and_linear(mixed):
    _, space, geo = mixed
    f0, trace = boundary_value_projection(space, geo, lambda p: np.ones(len(p)))
    assert np.allclose(f0[trace], 1.0, atol=1e-12)
    assert not np.delete(f0, trace).any()
    g = lambda p: 0.3 + 2 * p[:, 0] - p[:, 1]  # noqa: E731
    f0, trace = boundary_value_projection(space, geo, g)
    # straight boundary edges: linears are reproduced on the boundary
    for e in sorted(space.mesh.classification.boundary_edges):
        f = space.mesh.edge_faces[e][0]
        l = int(np.flatnonzero(space.mesh.face_edges[f] == e)[0])
        from almostc1.evaluation import edge_param

        u, v = edge_param(l, np.linspace(0, 1, 7))
        x = eval_geometry(space, geo, f, u, v, 0).x
        assert np.abs(eval_function(space, f0, f, u, v)[0] - g(x)).max() < 1e-12


def test_normal_projection_consistency(disk5, rng):
    _, space, geo = disk5
    ex = linear(0.5, 1.5, -0.7)
    f0, trace = boundary_value_projection(space, geo, lambda p: ex(p).value)
    lp = boundary_normal_projection(space, geo, f0, lambda p: ex(p).grad, trace)
    target = 0.5 + 1.5 * geo.points[:, 0] - 0.7 * geo.points[:, 1]
    sel = np.union1d(trace, lp.layer)
    assert np.abs(lp.coeffs[sel] - target[sel]).max() < 1e-10
    zero = boundary_normal_projection(space, geo, np.zeros(space.n_dofs), lambda p: np.zeros((len(p), 2)), trace)
    assert not zero.coeffs.any() and lp.rank <= len(lp.layer)


@pytest.mark.parametrize("problem", ["p1", "p2"])
@pytest.mark.parametrize("fixture", ["disk5", "mixed"])
def test_galerkin_consistency(problem, fixture, request):
    _, space, geo = request.getfixturevalue(fixture)
    ex = linear(0.2, -1.0, 0.4)
    res = solve_problem(space, geo, problem, exact=ex)
    target = 0.2 - geo.points[:, 0] + 0.4 * geo.points[:, 1]
    assert np.abs(res.coeffs - target).max() < 1e-10
    assert max(res.errors) < 1e-10
    assert res.residual < 1e-10


def test_p2_refuses_bstar(disk5):
    _, space, geo = disk5
    with pytest.raises(ValueError):
        build_system(space.star, geo, "p2")
    with pytest.raises(ValueError):
        build_system(space, geo, "p3")


def test_reduced_system_spd(disk5):
    _, space, geo = disk5
    for problem in ("p1", "p2"):
        system, _ = build_system(space, geo, problem)
        A, _ = system.reduced()
        assert np.linalg.eigvalsh(A.toarray()).min() > 0


def test_condition_number():
    assert condition_number(sp.identity(5)) == pytest.approx(1.0)
    assert condition_number(sp.identity(500)) == pytest.approx(1.0, rel=1e-6)
    d = np.linspace(1.0, 50.0, 400)
    assert condition_number(sp.diags(d)) == pytest.approx(50.0, rel=1e-6)


def test_error_norms_of_zero(mixed):
    _, space, geo = mixed
    e4 = error_norms(space, geo, np.zeros(space.n_dofs))
    e8 = error_norms(space, geo, np.zeros(space.n_dofs), q=8)
    assert np.allclose(e4, e8, rtol=1e-4)
    assert 0 < e4[0] <= e4[1] <= e4[2]
    # sin^2 integrates to half the side length over whole periods of [0, 4]
    assert e8[0] == pytest.approx(2.0, rel=1e-10)


def test_fit_recovers_space_function(disk5, rng):
    _, space, geo = disk5
    c = rng.normal(size=(space.n_dofs, 2))
    got = fit_geometry(space, lambda f, u, v: eval_function(space, c, f, u, v)[0])
    assert np.abs(got - c).max() < 1e-10


def test_default_net_reproduces_plane(grid4):
    _, space, geo = grid4
    z = fit_geometry(space, lambda f, u, v: 1 + 2 * eval_geometry(space, geo, f, u, v, 0).x @ [1.0, -0.5])
    assert np.abs(z - (1 + 2 * geo.points @ [1.0, -0.5])).max() < 1e-10


def test_convergence_study_small():
    rec = convergence_study(disk_mesh(5), "p1", levels=2, cond=True)
    assert rec.n == [5 * (2 ** (i + 1) + 1) ** 2 + 3 for i in range(3)]
    errs = np.array(rec.errors)
    assert np.all(np.diff(errs[:, 0]) < 0)
    rows = rec.rows()
    assert rows[0]["rate_L2"] is None and rows[1]["rate_L2"] > 2
    assert all(k > 1 for k in rec.kappa)


def test_p1_disk5_level3_budget():
    mesh = disk_mesh(5)
    space, geo = build_space(mesh)
    t0 = time.perf_counter()
    for _ in range(4):
        mesh, space, geo = refine_geometry(mesh, space, geo)
    res = solve_problem(space, geo, "p1")
    assert time.perf_counter() - t0 < 60
    assert res.residual < 1e-10 and space.n_dofs == 5 * 17**2 + 3


def test_regular_grid_p1_rate():
    mesh = structured_grid(2)
    rec = convergence_study(mesh, "p1", levels=2, offset=0)
    r = rec.rates()
    assert r[-1, 0] > 2.7 and r[-1, 1] > 1.8
