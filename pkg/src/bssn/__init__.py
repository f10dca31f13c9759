"""Semismooth Newton solvers for ``min_u g(u) + sum_k w_k |u_k|``."""

from .core import (
    IndexPartition,
    IndexSets,
    Objective,
    WeightedL1Problem,
    classify,
    dir_derivative_F,
    dir_derivative_merit,
    hessian_bounds,
    merit,
    residual_map,
    soft_threshold,
    tikhonov_value,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    LcpError,
    LineSearchError,
    NumericalError,
    SolverError,
)
from .lcp import LcpInstance, LcpSolution, brute_force_lcp, damped_newton_lcp, lemke, solve_lcp
from .newton import IterationRecord, SolveResult, SolverConfig, solve

__version__ = "0.1.0"
