"""Exception hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI maps it to.
"""


class RobustERMError(Exception):
    exit_code = 1


class ConfigurationError(RobustERMError, ValueError):
    """Invalid parameters (block counts, quadrature orders, model settings)."""


class DomainError(RobustERMError, ValueError):
    """Argument outside the mathematical domain of a function."""


class DataError(RobustERMError, ValueError):
    """Non-finite or malformed sample data."""


class SpecError(RobustERMError, ValueError):
    """Covariance specification that is not positive semidefinite."""


class NumericalError(RobustERMError, ArithmeticError):
    exit_code = 2


class DegenerateWeightsError(NumericalError):
    """All block weights vanished, so the implicit gradient is undefined."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class HarnessError(RobustERMError):
    exit_code = 2


class ReportError(RobustERMError, ValueError):
    """A normality report cannot be formed (e.g. zero theoretical variance)."""
