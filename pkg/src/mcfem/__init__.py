"""Evolving surface finite elements for mean curvature flow of closed surfaces."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CapacityError,
    ConvergenceError,
    GeometryError,
    HypothesisError,
    McfemError,
    SingularTimeError,
)
from .mesh import SurfaceMesh, build_icosphere, mesh_size, refine  # noqa: F401
