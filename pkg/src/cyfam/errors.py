"""Exception types shared across the package."""


class CyfamError(Exception):
    """Base class for all package errors."""


class InvalidPeriodError(CyfamError, ValueError):
    """Period matrix is not symmetric with positive-definite imaginary part."""


class PairingError(CyfamError, TypeError):
    """Tensor contraction pairing is incompatible with the index variances."""


class NotSolvableError(CyfamError, ValueError):
    """Right-hand side violates the solvability condition (nonzero mean)."""


class SolverError(CyfamError, RuntimeError):
    """Iterative solver failed to reach tolerance.

    Carries the residual trace of the failed run in ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class StepFailureError(CyfamError, RuntimeError):
    """A damped step could not make progress while keeping the metric positive."""


class AccuracyError(CyfamError, RuntimeError):
    """Requested tolerance is unachievable with the configured discretization."""


class SingularPointError(CyfamError, ValueError):
    """Evaluation requested at a singular point (e.g. Green kernel on the diagonal)."""


class ConfigError(CyfamError, ValueError):
    """Scenario configuration failed to parse or validate."""
