"""Exception types shared across the package."""


class GraphsimError(Exception):
    """Base class for all graphsim errors."""


class ValidationError(GraphsimError, ValueError):
    """Invalid input data or configuration."""


class NumericError(GraphsimError, RuntimeError):
    """Numerical failure: non-convergence, non-finite values."""


class DegenerateGraphError(ValidationError):
    """Graph operation undefined for this graph (e.g. lambda_max <= 0)."""
