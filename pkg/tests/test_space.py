import math

import numpy as np
import pytest

from almostc1.basis import knot_insertion_matrix, tensor_basis
from almostc1.bstar import EV, FACE, DofId
from almostc1.errors import DegenerateProjection, NegativeBarycentric, ZeroNormal
from almostc1.fem import assemble
from almostc1.mesh import build_mesh, disk_mesh, mixed_mesh, refine_times, structured_grid
from almostc1.space import (
    build_space,
    default_control_net,
    default_normal,
    dof_set,
    eliminated_dofs,
    ev_spline_coeffs,
    ev_templates,
    star_corner_blocks,
    subdivide_truncate,
    tangent_frame,
    tangent_projection,
    template_points,
    template_triangle,
    truncation_matrices,
)
from almostc1.triangles import barycentric, control_triangle

S5 = math.sqrt(5.0)


def frame_mesh():
    """Inner square with four valence-3 interior vertices: one all-EV face."""
    P = np.array([[1, 1], [2, 1], [2, 2], [1, 2], [0, 0], [3, 0], [3, 3], [0, 3.0]])
    return build_mesh(P, [(0, 1, 2, 3), (4, 5, 1, 0), (5, 6, 2, 1), (6, 7, 3, 2), (7, 4, 0, 3)])


def bound(mesh):
    c = mesh.classification
    return mesh.n_faces + len(c.boundary_edges) + len(c.corner_vertices) + 3 * len(c.extraordinary_vertices)


# -- truncation and subdivision -------------------------------------------------
def test_truncation_matrices():
    T = truncation_matrices()
    assert np.array_equal(np.argwhere(T[0] == 0), [[0, 0], [0, 1], [1, 0], [1, 1]])
    assert not (T[0] * T[1] * T[2] * T[3]).any()
    assert all(t.sum() == 12 for t in T)


def test_subdivide_no_flags_is_knot_insertion(rng):
    c = rng.normal(size=(3, 3))
    K = knot_insertion_matrix()
    assert np.allclose(subdivide_truncate(c), K @ c @ K.T, atol=1e-15)
    u, v = rng.uniform(0, 1, (2, 25))
    a = tensor_basis(0, u, v)[0] @ c.ravel()
    b = tensor_basis(1, u, v)[0] @ subdivide_truncate(c).ravel()
    assert np.abs(a - b).max() < 1e-14


def test_subdivide_all_flags_zero():
    assert not subdivide_truncate(np.ones((3, 3)), (True,) * 4).any()


def test_truncated_corner_vanishes():
    c = subdivide_truncate(np.ones((3, 3)), (True, False, False, False))
    N, Nu, Nv = tensor_basis(1, [0.0], [0.0], 1)
    assert N @ c.ravel() == 0 and Nu @ c.ravel() == 0 and Nv @ c.ravel() == 0


# -- tangent plane and EV coefficients ----------------------------------------
def _cone_blocks(mu, tilt=0.0, height=0.3):
    """Corner blocks of a symmetric cone around the z axis, optionally tilted."""
    P = template_points(mu)
    r = np.linalg.norm(P, axis=-1)
    B = np.concatenate([P, (height * r)[..., None]], axis=-1)
    c, s = math.cos(tilt), math.sin(tilt)
    R = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    return B @ R.T, R


def test_planar_projection_is_identity():
    P = template_points(5)
    B = np.concatenate([P, np.zeros(P.shape[:-1] + (1,))], axis=-1)
    fr = tangent_frame(B, np.array([0, 0, 1.0]))
    Q = tangent_projection(B, fr)
    # isometry: pairwise distances preserved
    a, b = P.reshape(-1, 2), Q.reshape(-1, 2)
    da = np.linalg.norm(a[:, None] - a[None], axis=-1)
    db = np.linalg.norm(b[:, None] - b[None], axis=-1)
    assert np.abs(da - db).max() < 1e-14


@pytest.mark.parametrize("mu", [3, 5, 6])
def test_cone_normal_and_regular_fan(mu):
    B, R = _cone_blocks(mu, tilt=math.radians(30))
    n = default_normal(B)
    assert np.allclose(n, R @ [0, 0, 1.0], atol=1e-12) or np.allclose(n, -(R @ [0, 0, 1.0]), atol=1e-12)
    pts = tangent_projection(B, tangent_frame(B, n))
    spokes = pts[:, 1, 0]
    ang = np.diff(np.unwrap(np.arctan2(spokes[:, 1], spokes[:, 0])))
    assert np.allclose(np.abs(ang), 2 * math.pi / mu, atol=1e-12)
    assert np.allclose(np.linalg.norm(spokes, axis=1), np.linalg.norm(spokes[0]), atol=1e-12)


def test_zero_normal():
    # a saddle whose corner normals cancel pairwise
    B = np.zeros((2, 2, 2, 3))
    B[0, 1, 0] = [1, 0, 0]
    B[0, 0, 1] = [0, 1, 0]
    B[1, 1, 0] = [0, 1, 0]
    B[1, 0, 1] = [1, 0, 0]
    with pytest.raises(ZeroNormal):
        default_normal(B)


def test_degenerate_projection():
    B = np.zeros((3, 2, 2, 3))
    B[..., 2] = np.arange(12).reshape(3, 2, 2)
    with pytest.raises(DegenerateProjection):
        tangent_projection(B, tangent_frame(B + [[[[1e-3, 0, 0]]]], np.array([0, 0, 1.0])))


def test_ev_coeffs_partition_and_reconstruction(rng):
    P = template_points(5) + 0.05 * rng.normal(size=(5, 2, 2, 2))
    tri = control_triangle(P.reshape(-1, 2))
    C = ev_spline_coeffs(tri, P)
    assert np.allclose(C.sum(axis=1), 1.0, atol=1e-14)
    rec = np.einsum("inab,nd->iabd", C, tri.vertices)
    assert np.abs(rec - P).max() < 1e-13
    with pytest.raises(NegativeBarycentric):
        ev_spline_coeffs(np.array([[0, 0], [0.1, 0], [0, 0.1]]), P)


# -- extraordinary-vertex templates ------------------------------------------
# c10 is the corner-block entry one step along the spoke shared with the next
# ring face, which is slot (0, 1) in this package's frames.
def _c11(T, nu, i):
    return T[i - 1, nu - 1, 1, 1]


def _c10(T, nu, i):
    return T[i - 1, nu - 1, 0, 1]


def test_template_mu3():
    T = ev_templates(3)
    assert _c11(T, 1, 1) == pytest.approx(2 / 3, abs=1e-12)
    assert _c10(T, 1, 1) == pytest.approx(1 / 2, abs=1e-12)
    assert _c11(T, 1, 2) == pytest.approx(1 / 6, abs=1e-12)
    assert _c10(T, 1, 2) == pytest.approx(0.0, abs=1e-12)
    assert _c11(T, 1, 3) == pytest.approx(1 / 6, abs=1e-12)
    assert _c10(T, 1, 3) == pytest.approx(1 / 2, abs=1e-12)
    # rotational symmetry: B_2 on sigma_{i+1} equals B_1 on sigma_i
    for nu in (1, 2):
        assert np.allclose(np.roll(T[:, nu - 1], 1, axis=0), T[:, nu], atol=1e-12)


def test_template_mu5():
    T = ev_templates(5)
    r = math.sqrt
    ref1 = [
        (2 / 3, 1 / 2),
        ((3 + S5) / 12, (1 + S5) / 12),
        ((3 - S5) / 12, (3 - S5) / 6),
        ((3 - S5) / 12, (1 + S5) / 12),
        ((3 + S5) / 12, 1 / 2),
    ]
    ref2 = [
        (1 / 6, (3 + r(15 - 6 * S5)) / 12),
        ((9 - S5 + r(30 + 6 * S5)) / 24, (11 - S5 + r(30 - 6 * S5)) / 24),
        ((9 + S5 + r(30 - 6 * S5)) / 24, (3 + S5) / 12),
        ((9 + S5 - r(30 - 6 * S5)) / 24, (11 - S5 - r(30 - 6 * S5)) / 24),
        ((9 - S5 - r(30 + 6 * S5)) / 24, (3 - r(15 - 6 * S5)) / 12),
    ]
    for i, (a, b) in enumerate(ref1, 1):
        assert _c11(T, 1, i) == pytest.approx(a, abs=1e-12)
        assert _c10(T, 1, i) == pytest.approx(b, abs=1e-12)
    for i, (a, b) in enumerate(ref2, 1):
        assert _c11(T, 2, i) == pytest.approx(a, abs=1e-12)
        assert _c10(T, 2, i) == pytest.approx(b, abs=1e-12)
    assert _c10(T, 2, 1) == pytest.approx(0.354867, abs=1e-6)


def test_template_mu6():
    T = ev_templates(6)
    c11 = [2 / 3, 1 / 2, 1 / 6, 0, 1 / 6, 1 / 2]
    c10 = [1 / 2, 1 / 3, 1 / 6, 1 / 6, 1 / 3, 1 / 2]
    for i in range(6):
        assert _c11(T, 1, i + 1) == pytest.approx(c11[i], abs=1e-12)
        assert _c10(T, 1, i + 1) == pytest.approx(c10[i], abs=1e-12)


@pytest.mark.parametrize("mu,boundary", [(3, False), (4, False), (5, False), (7, False), (8, False), (2, True), (3, True), (4, True)])
def test_template_common_properties(mu, boundary):
    T = ev_templates(mu, boundary)
    assert np.allclose(T[:, :, 0, 0], 1 / 3, atol=1e-12) or boundary
    assert T.min() >= 0 and np.allclose(T.sum(axis=1), 1.0, atol=1e-14)
    assert template_triangle(mu, boundary).area > 0


# -- assembled space ---------------------------------------------------------
SPACES = [("disk", mu, lvl) for mu in (3, 5, 6, 7) for lvl in (0, 1)] + [("mixed", 0, 0), ("frame", 0, 0)]


def _space(kind, mu, lvl, mode="geometric"):
    mesh = {"disk": lambda: disk_mesh(mu), "mixed": mixed_mesh, "frame": frame_mesh}[kind]()
    mesh = refine_times(mesh, lvl)
    return build_space(mesh, mode=mode)


@pytest.mark.parametrize("kind,mu,lvl", SPACES)
@pytest.mark.parametrize("mode", ["geometric", "template"])
def test_space_invariants(kind, mu, lvl, mode, rng):
    space, geo = _space(kind, mu, lvl, mode)
    mesh, table = space.mesh, space.table
    c = mesh.classification
    assert table.E.data.min() >= 0
    for f in range(mesh.n_faces):
        assert np.allclose(table.face_block(f).toarray().sum(axis=1), 1.0, atol=1e-13)
    # dof count with eliminated dofs reported
    assert space.n_dofs == bound(mesh) - len(space.eliminated)
    # EV splines supported on the one-ring only
    for d in range(space.n_dofs):
        dof = space.dofs[d]
        if dof.kind == EV:
            col = table.E[:, d]
            faces = {int(np.searchsorted(table.offset, r, side="right") - 1) for r in col.nonzero()[0]}
            assert faces <= set(mesh.vertex_faces[dof.entity])
    # truncation: regular splines have zero value and gradient at every EV
    for g in c.extraordinary_vertices:
        for f in mesh.vertex_faces[g]:
            l = list(mesh.faces[f]).index(g)
            u, v = [(0, 0), (1, 0), (1, 1), (0, 1)][l]
            act, (N, Nu, Nv) = table.basis_values(f, [u], [v], 1)
            reg = np.array([space.dofs[a].kind != EV for a in act])
            assert not N[0, reg].any() and not Nu[0, reg].any() and not Nv[0, reg].any()
            assert N[0, ~reg].sum() == pytest.approx(1.0, abs=1e-14)
    # SPD mass matrix
    M = assemble(space, geo, "mass").toarray()
    assert np.linalg.eigvalsh(M).min() > 0


def test_eliminated_dofs_reported():
    mesh = frame_mesh()
    assert eliminated_dofs(mesh) == [DofId(FACE, 0)]
    space, _ = build_space(mesh)
    assert space.n_dofs == bound(mesh) - 1 == 20
    assert DofId(FACE, 0) not in space.dofs


def test_dof_formula_disk5_refined():
    mesh = refine_times(disk_mesh(5), 1)
    assert len(dof_set(mesh)) == 5 * 3**2 + 3 == bound(mesh)


def test_no_ev_space_equals_star():
    mesh = structured_grid(3)
    space, geo = build_space(mesh)
    assert (space.table.E != space.star.E).nnz == 0
    assert np.array_equal(geo.points, default_control_net(mesh))


def test_ev_corner_clouds_planar(rng):
    # non-planar lift of disk_mesh(5): corner blocks of x around the EV are coplanar
    mesh = disk_mesh(5)
    x2 = default_control_net(mesh)
    x3 = np.column_stack([x2, 0.3 * np.sin(2 * x2[:, 0]) + 0.2 * x2[:, 1] ** 2 + 0.1 * rng.normal(size=len(x2))])
    space, geo = build_space(mesh, x3)
    data = space.ev[0]
    blocks = np.array(
        [np.rot90(space.table.face_coefficients(geo.points, f), -l)[:2, :2] for f, l in data.ring]
    ).reshape(-1, 3)
    s = np.linalg.svd(blocks - blocks.mean(0), compute_uv=False)
    assert s[2] < 1e-10 * s[0]


def test_coplanar_ring_gives_x_equal_xstar():
    # planar input with matching normals: x = x* at the coefficient level
    mesh = disk_mesh(5)
    xs = default_control_net(mesh)
    x3 = np.column_stack([xs, np.zeros(len(xs))])
    space, geo = build_space(mesh, x3, normals={0: np.array([0, 0, 1.0])})
    for f in range(mesh.n_faces):
        a = space.table.face_coefficients(geo.points, f)
        b = subdivide_truncate(space.star.face_coefficients(x3, f))
        assert np.abs(a - b).max() < 1e-12
    # the same holds in 2D, where the plane is implicit
    space2, geo2 = build_space(mesh)
    for f in range(mesh.n_faces):
        a = space2.table.face_coefficients(geo2.points, f)
        b = subdivide_truncate(space2.star.face_coefficients(xs, f))
        assert np.abs(a - b).max() < 1e-12


def test_star_corner_blocks_shape():
    mesh = disk_mesh(6)
    space, _ = build_space(mesh)
    ring, blocks = star_corner_blocks(mesh, space.star, default_control_net(mesh), 0)
    assert blocks.shape == (6, 2, 2, 2) and len(ring) == 6
    assert np.allclose(blocks[:, 0, 0], 0.0, atol=1e-15)
