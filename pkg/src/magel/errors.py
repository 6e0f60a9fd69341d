"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class MagelError(Exception):
    exit_code = 3


class ConfigurationError(MagelError, ValueError):
    exit_code = 2


class PreconditionError(MagelError, ValueError):
    exit_code = 2


class InadmissibleStateError(MagelError, ValueError):
    """det Dy <= 0 somewhere: the barrier is undefined."""

    exit_code = 3


class OnBoundaryError(MagelError, ValueError):
    """Degree requested too close to the boundary image."""

    exit_code = 3


class PaddingTooSmallError(MagelError):
    exit_code = 3


class SolverError(MagelError):
    """Iterative solver hit its cap; ``residual`` holds the last relative residual."""

    exit_code = 3

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class StepFailure(MagelError):
    exit_code = 3

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
