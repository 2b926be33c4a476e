"""Exception hierarchy shared by all solver modules."""


class KineticMagnusError(Exception):
    pass


class ConfigurationError(KineticMagnusError, ValueError):
    """Invalid grid, coefficient family, or experiment parameters."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems) if problems else [message]


class DimensionMismatchError(KineticMagnusError, ValueError):
    pass


class ExpmvOverflowError(KineticMagnusError, FloatingPointError):
    """Non-finite values appeared while applying a matrix exponential."""


class ToleranceNotReachedError(KineticMagnusError, ArithmeticError):
    """The Taylor series did not converge within the term budget."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


class AllTrajectoriesFailedError(KineticMagnusError, RuntimeError):
    """Every trajectory of a solve blew up; carries the ensemble for inspection."""

    def __init__(self, message, ensemble):
        super().__init__(message)
        self.ensemble = ensemble


class ReferenceFailedError(KineticMagnusError, RuntimeError):
    """The reference solution of a comparison blew up, so errors are undefined."""
