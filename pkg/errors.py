"""
Exception hierarchy for bconcord

User errors (bad inputs, bad flags) map to CLI exit code 1, numerical
failures map to exit code 2.
"""


class BConcordError(Exception):
    """Base class for all bconcord errors"""
    exit_code = 1


class InvalidDataError(BConcordError):
    """Data matrix contains non-finite or non-numeric values"""


class InsufficientDataError(BConcordError):
    """Not enough observations or variables"""


class InvalidCovarianceError(BConcordError):
    """Covariance matrix is not symmetric, not PSD, or has a non-positive diagonal"""


class DimensionMismatchError(BConcordError):
    """Two objects that must share a dimension do not"""


class ConstraintViolationError(BConcordError):
    """A matrix has non-zero entries outside its graph constraint"""


class NumericalError(BConcordError):
    """Base class for numerical failures"""
    exit_code = 2


class ImproperPosteriorError(NumericalError):
    """Refitted posterior cannot be normalized (graph degree >= n)"""


class SingularSystemError(NumericalError):
    """Linear system is singular or indefinite"""

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class OracleDegenerateError(NumericalError):
    """A principal submatrix needed by the pattern enumeration is not PD"""


class InternalInvariantError(NumericalError):
    """A quantity that is positive by construction was not"""
