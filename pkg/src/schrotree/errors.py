"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes, so every failure a run can hit
should surface as one of them.
"""


class SchroTreeError(Exception):
    """Base class for library errors."""


class BudgetExceeded(SchroTreeError):
    """A ball, matrix or polynomial degree would exceed its configured budget."""


class ConvergenceError(SchroTreeError):
    """A quadrature or series failed to reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class PrecisionError(SchroTreeError):
    """Requested range is outside what the chosen arithmetic can resolve."""


class TaintedError(SchroTreeError):
    """Result depends on data contaminated by truncation (boundary mass)."""


class SingularSystemError(SchroTreeError):
    """A linear system was numerically singular at the sampled parameter."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConfigError(SchroTreeError):
    """Invalid experiment configuration."""
