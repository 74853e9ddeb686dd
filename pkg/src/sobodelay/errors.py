"""Exception hierarchy shared by the solver modules."""


class SobodelayError(Exception):
    """Base class for all solver errors."""


class InvalidArgumentError(SobodelayError, ValueError):
    pass


class ConfigError(SobodelayError, ValueError):
    """A run or scheme configuration is inconsistent."""


class AssemblyError(SobodelayError):
    """Non-finite integrand or degenerate cell met during assembly."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class UnsupportedError(SobodelayError):
    pass


class SingularMatrixError(SobodelayError):
    pass


class IterativeFailure(SobodelayError):
    """Linear iterative solver hit its iteration budget."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class NonlinearFailure(SobodelayError):
    """Newton iteration did not reach the requested tolerance."""

    def __init__(self, message, residual_history):
        super().__init__(message)
        self.residual_history = list(residual_history)


class StepFailure(SobodelayError):
    """A time step could not be completed."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StateError(SobodelayError):
    """Solver state is not ready for the requested operation."""
