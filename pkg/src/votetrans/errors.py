"""Exception types raised across the package.

Every error derives from :class:`VoteTransError`.  The CLI maps the three
families below onto exit codes (validation 2, convergence 3, I/O 4).
"""


class VoteTransError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class ValidationError(VoteTransError, ValueError):
    """Input data or parameters violate a documented precondition."""


class ConvergenceError(VoteTransError, RuntimeError):
    """An iterative routine stopped before meeting its tolerance."""

    exit_code = 3


# tables
class EmptyRowMargin(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class DimensionError(DimensionMismatch):
    pass


# genesis
class SpecError(ValidationError):
    pass


class InvalidPrecision(SpecError):
    pass


# goodman
class RankDeficient(ValidationError):
    pass


class TooFewUnits(ValidationError):
    pass


# logit / verdict
class MissingCovariate(ValidationError):
    pass


class NonConvergence(ConvergenceError):
    """Optimizer hit its iteration cap with the gradient above tolerance.

    The best parameters found so far are kept on ``best`` together with
    ``objective`` and ``grad_norm`` so callers can still use them.
    """

    def __init__(self, message, best=None, objective=None, grad_norm=None):
        super().__init__(message)
        self.best = best
        self.objective = objective
        self.grad_norm = grad_norm


class SingularWeightWarning(UserWarning):
    """A working covariance was singular and a ridge inverse was used."""


class SeparationWarning(UserWarning):
    """An individual-level logit coefficient hit the magnitude cap."""


# seam
class NoConvergence(ConvergenceError):
    """IPF did not reach the tolerance; ``table`` holds the last iterate."""

    def __init__(self, message, table=None, discrepancy=None):
        super().__init__(message)
        self.table = table
        self.discrepancy = discrepancy


class StructuralZero(ValidationError):
    pass


# lens
class InsufficientVariation(ValidationError):
    pass


class InsufficientUnits(ValidationError):
    pass


class OracleModeError(ValidationError):
    """A diagnostic needing individual data received aggregates only."""
