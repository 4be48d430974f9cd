"""Exception hierarchy shared by all modules."""


class ConjunctionError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(ConjunctionError, ValueError):
    """Input failed a schema or invariant check."""


class DegenerateGeometry(ConjunctionError, ValueError):
    """Position and velocity are collinear, or a vector has zero length."""


class NumericalFailure(ConjunctionError, RuntimeError):
    """A numerical routine did not converge or produced an unusable value."""


class NonConvergence(NumericalFailure):
    """Profile optimisation failed; carries the best iterate found."""

    def __init__(self, message, psi=None, best=None, grad_norm=None):
        super().__init__(message)
        self.psi = psi
        self.best = best
        self.grad_norm = grad_norm


class SingularInformation(NumericalFailure):
    """An information matrix (or its nuisance block) is numerically singular."""


class InvalidProfile(NumericalFailure):
    """The constrained log-likelihood exceeds the unconstrained maximum."""


class Indeterminate(NumericalFailure):
    """The modified root is undefined because the likelihood root is too close to zero."""


class OutOfRange(ConjunctionError, ValueError):
    """A requested pivot value lies outside the tabulated curve."""


class InvalidLosses(ConjunctionError, ValueError):
    """Loss table does not define a decision threshold."""
