"""Exception hierarchy.

Validation failures subclass :class:`ValueError` and map to CLI exit code 2;
numerical failures subclass :class:`ArithmeticError` and map to exit code 3.
"""


class HawkesError(Exception):
    """Base class for all package errors."""


class ValidationError(HawkesError, ValueError):
    pass


class NumericalError(HawkesError, ArithmeticError):
    pass


class SubcriticalityError(ValidationError):
    """A kernel has L1 norm >= 1, so the branching ratio rho is not < 1."""

    def __init__(self, message, generation=None, norm=None):
        super().__init__(message)
        self.generation = generation
        self.norm = norm


class GridMismatchError(ValidationError):
    pass


class NoEnvelopeError(ValidationError):
    """Thinning needs a non-increasing envelope the kernel cannot provide."""


class BaselineError(ValidationError):
    pass


class PartitionError(ValidationError):
    pass


class SpectralRadiusError(ValidationError):
    pass


class RuinConditionError(ValidationError):
    """One of the two inequalities m E[C] < p < Gamma_C(theta_c)/theta_c fails."""

    def __init__(self, message, which=None):
        super().__init__(message)
        self.which = which


class ScenarioError(ValidationError):
    pass


class TruncationError(NumericalError):
    """The generation cap is reached before the truncation bound drops below tol."""

    def __init__(self, message, achievable_bound=None):
        super().__init__(message)
        self.achievable_bound = achievable_bound


class GridBudgetError(NumericalError):
    pass


class NoSolutionError(NumericalError):
    pass
