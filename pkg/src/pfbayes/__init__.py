"""Phase-field brittle fracture with Bayesian parameter calibration."""

from .constitutive import MaterialParams
from .mesh import Mesh2D, build, build_dent, build_sent, build_voids
from .solver import FieldState, LoadDispCurve, PhaseFieldSolver, SolverConfig, run_load_stepping

__all__ = [
    "FieldState",
    "LoadDispCurve",
    "MaterialParams",
    "Mesh2D",
    "PhaseFieldSolver",
    "SolverConfig",
    "build",
    "build_dent",
    "build_sent",
    "build_voids",
    "run_load_stepping",
]

__version__ = "0.1.0"
