"""Green's-function fracture model with Newton and quasi-Newton solvers."""

from .core import CaseParams, DimensionlessGroups, FractureMesh1D, State, case_from_groups, dimensionless_aperture
from .ds1_model import Ds1Operators, build_operators
from .solvers import SolverConfig, newton_solve, quasi_newton_solve

__version__ = "0.1.0"

__all__ = [
    "CaseParams",
    "DimensionlessGroups",
    "FractureMesh1D",
    "State",
    "case_from_groups",
    "dimensionless_aperture",
    "Ds1Operators",
    "build_operators",
    "SolverConfig",
    "quasi_newton_solve",
    "newton_solve",
]
