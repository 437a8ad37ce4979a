"""Probabilistic solver for nonlocal integro-PDEs via BSDEs with jumps.

Simulates the forward jump diffusion, solves the associated (reflected)
BSDE system by regression Monte Carlo with a frozen-nonlocal-term Picard
loop, and certifies results against an independent finite-difference
oracle.
"""

from .bsde import (
    BsdeSolution,
    DriverSpec,
    ReflectedSolution,
    ValueFunction,
    WeightFamily,
    evaluate,
    jump_residual,
    regress,
    solve_system,
)
from .exceptions import (
    ConfigurationError,
    EvaluationError,
    IntegrationError,
    JumpflowError,
    RegressionError,
    SimulationError,
)
from .forward import CoefficientSet, PathBundle, TimeGrid, moment_statistic, simulate_paths
from .measure import JumpRecord, LevyMeasure, integrate, sample_jumps, stream, total_mass
from .operators import op_B, op_K
from .oracle import GridSolution, SpatialGrid, compare, solve_pide, solve_pide_obstacle
from .picard import PicardDiagnostics, alpha_norm, iterate, solve_fixed_point
from .problems import REGISTRY, ProblemSpec, get_problem
from .reflected import ObstacleSpec, apriori_bound_ratio, complementarity_residual, solve_reflected

__version__ = "0.1.0"
