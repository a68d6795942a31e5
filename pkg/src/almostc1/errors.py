"""Exception hierarchy.

Every error raised on purpose by the package derives from ``AlmostC1Error`` so
the CLI can map it to a non-zero exit code without catching unrelated bugs.
"""


class AlmostC1Error(Exception):
    """Base class for all package errors."""


# -- mesh ---------------------------------------------------------------------
class MeshError(AlmostC1Error):
    pass


class InvalidFace(MeshError):
    pass


class NonManifoldEdge(MeshError):
    pass


class KissingVertex(MeshError):
    pass


class InconsistentOrientation(MeshError):
    pass


class HangingNode(MeshError):
    pass


class DesignatedCornerNotOnBoundary(MeshError):
    pass


class DesignatedCornerIsExtraordinary(MeshError):
    pass


class MeshParseError(MeshError):
    pass


# -- spaces -------------------------------------------------------------------
class FaceOutOfRange(AlmostC1Error, IndexError):
    pass


class DegenerateProjection(AlmostC1Error):
    pass


class ZeroNormal(AlmostC1Error):
    pass


class CollinearPoints(AlmostC1Error):
    pass


class DegenerateTriangle(AlmostC1Error):
    pass


class NegativeBarycentric(AlmostC1Error):
    pass


class UnsupportedValence(AlmostC1Error):
    pass


class AmbiguousAssignment(AlmostC1Error):
    pass


# -- analysis -----------------------------------------------------------------
class SingularJacobian(AlmostC1Error):
    pass


class SingularMass(AlmostC1Error):
    pass


class SingularBoundaryMass(SingularMass):
    pass


class SolverBreakdown(AlmostC1Error):
    pass


class NoConvergence(AlmostC1Error):
    pass
