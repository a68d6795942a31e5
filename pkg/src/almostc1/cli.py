"""Command line interface: ``almostc1 {info,refine,fit,solve,study,export}``.

Meshes are quad OBJ files or built-in fixtures named ``disk:MU``,
``grid:N`` or ``mixed``.  Settings come from flags, then an optional JSON
config file (``--config``), then defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import io
from .bstar import dof_set_star
from .errors import AlmostC1Error, MeshError
from .mesh import disk_mesh, mixed_mesh, refine_topology, structured_grid
from .space import build_space, dof_set, eliminated_dofs

EXIT_MESH = 2
EXIT_COMPUTE = 3
EXIT_USAGE = 4


@dataclass
class RunConfig:
    mesh: str = "disk:5"
    sidecar: str | None = None
    mode: str = "geometric"
    triangle: str = "boundary-adapted"
    levels: int = 0
    problem: str = "p1"
    quad: int = 4
    solver: str = "direct"
    cond: bool = False
    out: str = "out"
    seed: int = 0

    def validate(self):
        if self.levels < 0:
            raise ValueError("levels must be >= 0")
        if self.quad < 2:
            raise ValueError("quadrature order must be >= 2")
        if self.mode not in ("geometric", "template"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.triangle not in ("min-area", "boundary-adapted"):
            raise ValueError(f"unknown triangle strategy {self.triangle!r}")
        if self.problem not in ("p1", "p2"):
            raise ValueError(f"unknown problem {self.problem!r}")
        return self


def load_mesh(spec: str, sidecar=None):
    """Mesh and EV normals from a path or a fixture name."""
    name, _, arg = spec.partition(":")
    if name == "disk" and arg:
        return disk_mesh(int(arg)), {}
    if name == "grid" and arg:
        return structured_grid(int(arg)), {}
    if spec == "mixed":
        return mixed_mesh(), {}
    return io.read_mesh(spec, sidecar)


def _levels(cfg: RunConfig, refinements: int | None = None):
    """Yield ``(k, mesh, space, geometry)`` after ``k = 0..levels`` refinements."""
    from .refine import refine_geometry

    mesh, normals = load_mesh(cfg.mesh, cfg.sidecar)
    space, geo = build_space(mesh, normals=normals or None, mode=cfg.mode, triangle=cfg.triangle)
    yield 0, mesh, space, geo
    for k in range(1, (cfg.levels if refinements is None else refinements) + 1):
        mesh, space, geo = refine_geometry(mesh, space, geo)
        yield k, mesh, space, geo


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(cfg: RunConfig, out: Path):
    io.write_json(out / "config.json", asdict(cfg))


# -- commands --------------------------------------------------------------------------
def cmd_info(cfg: RunConfig) -> int:
    mesh, _ = load_mesh(cfg.mesh, cfg.sidecar)
    for k in range(cfg.levels + 1):
        if k:
            mesh, _ = refine_topology(mesh)
        c = mesh.classification
        val = {int(v): int(c.valence[v]) for v in sorted(c.extraordinary_vertices)}
        n_star = len(dof_set_star(mesh))
        n = len(dof_set(mesh))
        bound = mesh.n_faces + len(c.boundary_edges) + len(c.corner_vertices) + 3 * len(val)
        print(f"refinements {k}")
        print(f"  vertices {mesh.n_vertices} edges {mesh.n_edges} faces {mesh.n_faces}")
        print(f"  boundary edges {len(c.boundary_edges)} corners {len(c.corner_vertices)}")
        print(f"  extraordinary vertices {len(val)} valences {sorted(val.values())}")
        print(f"  extraordinary faces {len(c.extraordinary_faces)} spoke edges {len(c.spoke_edges)}")
        print(f"  dofs B* {n_star} B {n} bound {bound} equality {n == bound}")
        print(f"  eliminated {len(eliminated_dofs(mesh))}")
    return 0


def cmd_refine(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    _write_config(cfg, out)
    for k, mesh, space, geo in _levels(cfg):
        io.write_mesh(out / f"mesh_{k}.obj", mesh, geo.normals)
        io.write_json(out / f"space_{k}.json", io.space_dump(space, geo))
        print(f"level {k}: faces {mesh.n_faces} dofs {space.n_dofs}")
    return 0


def cmd_fit(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    _write_config(cfg, out)
    *_, (k, mesh, space, geo) = _levels(cfg)
    io.write_json(
        out / "control_points.json",
        {"dofs": [str(d) for d in space.dofs], "points": geo.points.tolist()},
    )
    P, cells, _, _ = io.sample_grid(space, geo, m=5)
    io.write_vtk(out / "geometry.vtk", P, cells)
    print(f"fitted {space.n_dofs} control points after {k} refinements")
    return 0


def cmd_solve(cfg: RunConfig) -> int:
    from .fem import solve_problem

    out = _outdir(cfg)
    _write_config(cfg, out)
    *_, (k, mesh, space, geo) = _levels(cfg)
    res = solve_problem(space, geo, cfg.problem, cfg.quad, cfg.cond)
    P, cells, F, _ = io.sample_grid(space, geo, m=5, values=res.coeffs)
    io.write_vtk(out / "solution.vtk", P, cells, F, name="f_h")
    row = {"level": k, "n": space.n_dofs, "kappa": res.kappa}
    row.update(zip(("err_L2", "err_H1", "err_H2"), res.errors))
    io.write_csv(out / "solve.csv", [row])
    print(
        f"{cfg.problem} n={space.n_dofs} L2={res.errors[0]:.6e} H1={res.errors[1]:.6e} "
        f"H2={res.errors[2]:.6e}" + (f" kappa={res.kappa:.6e}" if res.kappa else "")
    )
    return 0


def cmd_study(cfg: RunConfig) -> int:
    from .fem import convergence_study

    out = _outdir(cfg)
    _write_config(cfg, out)
    mesh, _ = load_mesh(cfg.mesh, cfg.sidecar)
    rec = convergence_study(
        mesh, cfg.problem, cfg.levels, cfg.quad, cfg.cond, mode=cfg.mode, triangle=cfg.triangle
    )
    rows = rec.rows()
    io.write_csv(out / "study.csv", rows)
    with open(out / "study.dat", "w") as fh:
        fh.write("# n^-1/2 err_L2 err_H1 err_H2\n")
        for r in rows:
            fh.write(" ".join(io.fmt(x) for x in (r["n"] ** -0.5, r["err_L2"], r["err_H1"], r["err_H2"])) + "\n")
    for r in rows:
        print(
            f"level {r['level']} n={r['n']} L2={r['err_L2']:.3e} H1={r['err_H1']:.3e} "
            f"H2={r['err_H2']:.3e}" + (f" kappa={r['kappa']:.3e}" if r["kappa"] else "")
        )
    return 0


def cmd_export(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    _write_config(cfg, out)
    *_, (k, mesh, space, geo) = _levels(cfg)
    P, cells, _, _ = io.sample_grid(space, geo, m=9)
    io.write_vtk(out / "surface.vtk", P, cells)
    B, quads = io.bezier_net(space, geo)
    io.write_obj(out / "bezier_net.obj", B, quads)
    gap = max((watertight_gap(space, geo, e) for e in sorted(mesh.classification.interior_edges)), default=0.0)
    print(f"exported {mesh.n_faces} faces, {len(quads) // 4} Bezier pieces, max edge gap {gap:.3e}")
    return 0


def watertight_gap(space, geometry, edge: int, m: int = 11) -> float:
    """Largest distance between the two face-wise samples of an interior edge."""
    from .evaluation import edge_param, eval_geometry

    mesh = space.mesh
    t = np.linspace(0.0, 1.0, m)
    xs = []
    for f in mesh.edge_faces[edge]:
        l = int(np.flatnonzero(mesh.face_edges[f] == edge)[0])
        tt = t if mesh.faces[f][l] == mesh.edges[edge][0] else 1.0 - t
        u, v = edge_param(l, tt)
        xs.append(eval_geometry(space, geometry, f, u, v, order=0).x)
    return float(np.abs(xs[0] - xs[1]).max())


COMMANDS = {
    "info": cmd_info,
    "refine": cmd_refine,
    "fit": cmd_fit,
    "solve": cmd_solve,
    "study": cmd_study,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="almostc1", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--mesh", help="quad OBJ path or fixture (disk:MU, grid:N, mixed)")
    p.add_argument("--sidecar", help="JSON sidecar with corners and normals")
    p.add_argument("--mode", choices=["geometric", "template"])
    p.add_argument("--triangle", choices=["min-area", "boundary-adapted"])
    p.add_argument("--levels", type=int, help="number of refinements (study: number of levels)")
    p.add_argument("--problem", choices=["p1", "p2"])
    p.add_argument("--quad", type=int, help="Gauss points per direction per piece")
    p.add_argument("--cond", action="store_true", default=None, help="compute condition numbers")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    return p


def make_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
        known = {f.name for f in fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(data)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = make_config(args)
        return COMMANDS[args.command](cfg)
    except MeshError as exc:
        print(f"error: invalid mesh: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MESH
    except AlmostC1Error as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
