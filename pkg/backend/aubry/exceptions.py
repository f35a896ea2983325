"""
Exception hierarchy for the toolkit.

Every error carries the process exit code the ``kam`` management command
uses when the error escapes to the command line.
"""

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIGURATION = 2
EXIT_NON_CONVERGENCE = 3


class ToolkitError(Exception):
    """Base class for toolkit errors."""

    exit_code = EXIT_CHECK_FAILED

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def __str__(self):
        if not self.details:
            return self.message
        extras = ", ".join(f"{key}={value!r}" for key, value in self.details.items())
        return f"{self.message} ({extras})"


class ConfigurationError(ToolkitError):
    """Invalid parameters, unknown built-in names or unusable numerical settings."""

    exit_code = EXIT_CONFIGURATION


class ArgumentError(ConfigurationError):
    """Arguments that are individually valid but do not fit together."""


class DegenerateMetricError(ToolkitError):
    """The metric tensor is not symmetric positive definite at a point."""


class DomainError(ToolkitError):
    """A closed-form function was evaluated outside its domain."""


class FlowError(ToolkitError):
    """An integration left the trusted regime (velocity cap exceeded)."""


class FrameBlowUpError(FlowError):
    """The Jacobi frame ODE produced non-finite values."""


class NonConvergenceError(ToolkitError):
    """An iterative solver stopped before reaching its tolerance."""

    exit_code = EXIT_NON_CONVERGENCE


class CheckFailure(ToolkitError):
    """A verification criterion failed."""

    exit_code = EXIT_CHECK_FAILED
