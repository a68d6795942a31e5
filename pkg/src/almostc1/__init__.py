"""Almost-C¹ biquadratic splines on unstructured quadrilateral meshes."""

from .bstar import DofId, ExtractionTable, assemble_extraction_star, dof_set_star
from .errors import *  # noqa: F401,F403
from .evaluation import eval_basis, eval_function, eval_geometry
from .fem import (
    ConvergenceRecord,
    assemble,
    condition_number,
    convergence_study,
    error_norms,
    fit_geometry,
    manufactured_solution,
    solve_problem,
)
from .mesh import (
    QuadMesh,
    build_mesh,
    classify,
    disk_mesh,
    mixed_mesh,
    one_ring,
    refine_topology,
    structured_grid,
)
from .refine import limit_check, refine_geometry, transfer_operator
from .space import Geometry, SplineSpace, build_space, default_control_net, dof_set
from .triangles import ControlTriangle, control_triangle, min_area_triangle

__version__ = "0.1.0"
