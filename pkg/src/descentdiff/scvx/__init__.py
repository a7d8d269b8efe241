"""Successive convexification for 6-DoF powered descent."""

from .conic import (ConicBuilder, ConicProgram, ConicSolution, ConicSolverError, DualInfeasibleError,
                    MaxIterationsError, PrimalInfeasibleError, solve_socp)
from .discretize import DiscretizedDynamics, IntegrationError, linearize, linearize_system
from .dynamics import DefectReport, dynamics_rhs, jacobians, propagate
from .solver import (IterationLog, ScvxResult, SubproblemFailure, default_initial_guess,
                     estimate_time_scale, scvx_solve)
from .subproblem import ScvxWeights, SubproblemSolution, assemble_subproblem, extract_solution

__all__ = [
    "ConicBuilder", "ConicProgram", "ConicSolution", "ConicSolverError", "DefectReport",
    "DiscretizedDynamics", "DualInfeasibleError", "IntegrationError", "IterationLog",
    "MaxIterationsError", "PrimalInfeasibleError", "ScvxResult", "ScvxWeights",
    "SubproblemFailure", "SubproblemSolution", "assemble_subproblem", "default_initial_guess",
    "dynamics_rhs", "estimate_time_scale", "extract_solution", "jacobians", "linearize",
    "linearize_system", "propagate", "scvx_solve", "solve_socp",
]
