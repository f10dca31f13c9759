"""Exception hierarchy used across the solver package."""


class SolverError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SolverError, ValueError):
    """Vector or matrix shapes do not match."""


class NumericalError(SolverError, ArithmeticError):
    """A callback returned non-finite values or a factorization failed."""


class LcpError(SolverError):
    """No LCP solver produced a valid complementary solution."""


class LineSearchError(SolverError):
    """The Armijo backtracking exceeded its cap.

    This should not happen for a genuine descent direction, so it is
    treated as an internal invariant violation.
    """


class ConvergenceError(SolverError):
    """An iterative procedure ran out of iterations."""


class ConfigError(SolverError, ValueError):
    """Invalid solver or experiment configuration."""
