"""Exception types raised across the package."""


class ValidationError(ValueError):
    """Input data or arguments violate a documented precondition."""


class FitError(RuntimeError):
    """Base class for propensity-model fitting failures."""


class ConvergenceError(FitError):
    """Newton iterations exhausted before the score equation was solved.

    Attributes
    ----------
    gradient_norm : float
        Max-abs coordinate of the score at the last iterate.
    """

    def __init__(self, message, gradient_norm=None):
        super().__init__(message)
        self.gradient_norm = gradient_norm


class SeparationError(FitError):
    """Fitted scores collapsed onto 0/1 before convergence (perfect separation)."""


class DegenerateFitError(FitError):
    """The model cannot be identified from the data (for example a single-arm sample)."""


class UnsupportedModelError(ValueError):
    """The requested operation is undefined for this propensity-model kind."""


class EstimationError(RuntimeError):
    """The estimator is undefined on the given data (for example an exhausted risk set)."""


class PositivityWarning(UserWarning):
    """Fitted propensity scores or at-risk sets come close to violating positivity."""


class HorizonWarning(UserWarning):
    """A requested evaluation time lies beyond the supported horizon."""
