class QVIError(Exception):
    """Base class for all errors raised by the package."""


class ConfigurationError(QVIError):
    pass


class NumericalError(QVIError):
    def __init__(self, message: str, condition: float | None = None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


class SolverError(QVIError):
    """A nonlinear or active-set solve did not converge.

    ``history`` carries whatever the solver tracked (residuals, active sets).
    """

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class ConvergenceError(SolverError):
    pass
