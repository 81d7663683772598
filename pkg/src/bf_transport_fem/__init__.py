"""Mixed finite elements for convective Brinkman-Forchheimer flow coupled to solute transport."""

from .forms import BoundaryData, ModelParams, Sources
from .mesh import BoundaryTag, Mesh, build_multiplier_partition, build_rectangle, build_unit_square, load_mesh, save_mesh
from .time_solver import DiscreteState, PicardError, Problem, Solver, SolverConfig, march

__all__ = [
    "BoundaryData",
    "BoundaryTag",
    "DiscreteState",
    "Mesh",
    "ModelParams",
    "PicardError",
    "Problem",
    "Solver",
    "SolverConfig",
    "Sources",
    "build_multiplier_partition",
    "build_rectangle",
    "build_unit_square",
    "load_mesh",
    "march",
    "save_mesh",
]
