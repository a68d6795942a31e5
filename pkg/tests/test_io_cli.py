import json

import numpy as np
import pytest

from almostc1 import io
from almostc1.cli import RunConfig, main, watertight_gap
from almostc1.errors import MeshParseError
from almostc1.mesh import disk_mesh, mixed_mesh
from almostc1.space import build_space


def test_obj_round_trip(tmp_path):
    mesh = mixed_mesh()
    io.write_mesh(tmp_path / "m.obj", mesh)
    back, normals = io.read_mesh(tmp_path / "m.obj", tmp_path / "m.json")
    assert np.array_equal(back.positions, mesh.positions)
    assert back.faces.tolist() == mesh.faces.tolist()
    assert back.designated_corners == mesh.designated_corners and normals == {}


def test_parse_obj_variants():
    P, faces = io.parse_obj("# c\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 -1\n")
    assert P.shape == (4, 2) and faces == [[0, 1, 2, 3]]
    P, _ = io.parse_obj("v 0 0 1\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    assert P.shape == (4, 3)


@pytest.mark.parametrize(
    "text", ["", "v 0 0\n", "v 0 0\nv 1 0\nv 1 1\nf 1 2 3\n", "v a b\nf 1 2 3 4\n", "v 0 0\nf 1 2 x 4\n"]
)
def test_parse_errors(text):
    with pytest.raises(MeshParseError):
        io.parse_obj(text)


def test_sidecar_round_trip(tmp_path):
    n = {3: np.array([0.0, 0.6, 0.8])}
    io.write_sidecar(tmp_path / "s.json", [1, 0], n)
    corners, normals = io.read_sidecar(tmp_path / "s.json")
    assert corners == [0, 1] and np.array_equal(normals[3], n[3])


def test_fmt_round_trip(rng):
    for x in rng.normal(size=50):
        assert float(io.fmt(x)) == x


def test_csv_header(tmp_path):
    io.write_csv(tmp_path / "a.csv", [{"level": 0, "n": 3, "err_L2": 0.1, "err_H1": 0.2, "err_H2": 0.3}])
    text = (tmp_path / "a.csv").read_text().splitlines()
    assert text[0] == "level,n,err_L2,err_H1,err_H2,kappa,rate_L2,rate_H1,rate_H2"
    assert io.read_csv(tmp_path / "a.csv")[0]["kappa"] == ""


def test_sample_grid_piece_counts():
    space, geo = build_space(mixed_mesh())
    P, cells, F, owner = io.sample_grid(space, geo, m=3)
    n_ev = int(space.table.kind.sum())
    assert len(owner) == space.mesh.n_faces + 3 * n_ev
    assert len(cells) == 4 * len(owner)


def test_bezier_net_matches_surface():
    space, geo = build_space(disk_mesh(5))
    B, quads = io.bezier_net(space, geo)
    assert len(B) == 9 * 4 * 5
    # corner points of every Bernstein piece lie on the surface
    from almostc1.evaluation import eval_geometry

    x = eval_geometry(space, geo, 0, [0.0, 0.5, 0.5], [0.0, 0.0, 0.5], 0).x
    assert np.allclose(B[[0, 6, 8]], x, atol=1e-14)


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.obj"
    bad.write_text("")
    assert main(["info", "--mesh", str(bad)]) == 2
    kiss = tmp_path / "kiss.obj"
    kiss.write_text("v 0 0\nv 1 0\nv 1 1\nv 0 1\nv 2 1\nv 2 2\nv 1 2\nf 1 2 3 4\nf 3 5 6 7\n")
    assert main(["info", "--mesh", str(kiss)]) == 2
    assert main(["info", "--mesh", str(tmp_path / "missing.obj")]) == 2
    assert main(["info", "--mesh", "disk:5", "--levels", "-1"]) == 4
    assert main(["info", "--mesh", "disk:5", "--quad", "1"]) == 4
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"nope": 1}))
    assert main(["info", "--config", str(cfg)]) == 4
    err = capsys.readouterr().err
    assert "KissingVertex" in err and "unknown config keys" in err


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mesh": "disk:3", "levels": 1}))
    assert main(["info", "--config", str(cfg), "--mesh", "disk:6"]) == 0
    out = capsys.readouterr().out
    assert "valences [6]" in out and "refinements 1" in out
    assert RunConfig().validate().mesh == "disk:5"


def test_info_dof_counts(capsys):
    assert main(["info", "--mesh", "disk:7", "--levels", "3"]) == 0
    out = capsys.readouterr().out
    assert "B 570 bound 570 equality True" in out
    assert main(["info", "--mesh", "mixed"]) == 0
    assert "B* 46 B 73 bound 73 equality True" in capsys.readouterr().out


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


@pytest.mark.parametrize(
    "args",
    [
        ["refine", "--mesh", "disk:5", "--levels", "1"],
        ["fit", "--mesh", "mixed"],
        ["solve", "--mesh", "disk:3", "--levels", "1", "--problem", "p2", "--cond"],
        ["study", "--mesh", "disk:5", "--levels", "1", "--cond"],
        ["export", "--mesh", "mixed", "--mode", "template"],
    ],
    ids=lambda a: a[0],
)
def test_commands_deterministic(args, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    ta, tb = _tree(a), _tree(b)
    ta.pop("config.json")
    tb.pop("config.json")
    assert ta == tb and ta
    capsys.readouterr()


def test_study_outputs(tmp_path, capsys):
    assert main(["study", "--mesh", "disk:5", "--levels", "1", "--cond", "--out", str(tmp_path)]) == 0
    rows = io.read_csv(tmp_path / "study.csv")
    assert [int(r["n"]) for r in rows] == [48, 128]
    assert all(float(r["kappa"]) > 1 for r in rows)
    assert (tmp_path / "study.dat").read_text().startswith("#")
    capsys.readouterr()


def test_refine_outputs_reload(tmp_path, capsys):
    assert main(["refine", "--mesh", "mixed", "--levels", "1", "--out", str(tmp_path)]) == 0
    mesh, _ = io.read_mesh(tmp_path / "mesh_1.obj", tmp_path / "mesh_1.json")
    space, _ = build_space(mesh)
    dump = json.loads((tmp_path / "space_1.json").read_text())
    assert len(dump["faces"]) == mesh.n_faces == 104
    assert space.n_dofs == 167
    assert len(dump["extraordinary"]) == 9
    capsys.readouterr()


def test_watertight_gap():
    space, geo = build_space(mixed_mesh())
    gaps = [watertight_gap(space, geo, e) for e in sorted(space.mesh.classification.interior_edges)]
    assert max(gaps) < 1e-12
