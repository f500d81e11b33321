"""Return-method trajectories and penalized controls for a coupled parabolic pair."""

__version__ = "0.1.0"

from .errors import (ConstructionError, ConvergenceError, DivergenceError, GeometryError, ParameterError,
                     ReturnCtrlError, WeightConfigurationError)
from .hum import build_weights, estimate_observability, penalty_sweep, select_window, solve_penalized_control
from .nonlinear import NonlinearProblem, demo_obstruction, freeze_coefficients, run_picard
from .pde import CoefficientSet, SpaceTimeGrid, solve_adjoint, solve_forward
from .trajectory import BumpConfig, assemble_trajectory, auto_geometry, build_reference, verify_trajectory

__all__ = [
    "BumpConfig", "CoefficientSet", "ConstructionError", "ConvergenceError", "DivergenceError", "GeometryError",
    "NonlinearProblem", "ParameterError", "ReturnCtrlError", "SpaceTimeGrid", "WeightConfigurationError",
    "assemble_trajectory", "auto_geometry", "build_reference", "build_weights", "demo_obstruction",
    "estimate_observability", "freeze_coefficients", "penalty_sweep", "run_picard", "select_window",
    "solve_adjoint", "solve_forward", "solve_penalized_control", "verify_trajectory",
]
