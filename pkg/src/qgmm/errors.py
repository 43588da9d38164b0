"""Exception hierarchy shared across the package."""


class QGMMError(Exception):
    """Base class for all errors raised by qgmm."""


class DomainError(QGMMError, ValueError):
    """Input outside the mathematical domain of a function (e.g. NaN)."""


class ParameterError(QGMMError, ValueError):
    """Invalid tuning parameter such as a non-positive bandwidth."""


class DimensionError(QGMMError, ValueError):
    """Array shapes do not conform."""


class InsufficientDataError(QGMMError, ValueError):
    pass


class IdentificationError(QGMMError):
    """The moment Jacobian is rank deficient.

    Attributes
    ----------
    singular_values : ndarray or None
        Singular values of the offending matrix, largest first.
    """

    def __init__(self, message, singular_values=None, stage=None):
        super().__init__(message)
        self.singular_values = singular_values
        self.stage = stage


class ConditioningError(QGMMError):
    """A covariance matrix is numerically singular even after ridging."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class NonFiniteObjectiveError(QGMMError, FloatingPointError):
    """An objective evaluation returned NaN or inf."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class EstimationError(QGMMError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, message, stage):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class InferenceError(QGMMError):
    """Too many bootstrap draws failed."""


class HarnessError(QGMMError):
    """Too many Monte Carlo replications failed."""
