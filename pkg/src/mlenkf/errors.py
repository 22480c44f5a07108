"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Bad argument: wrong shape, non-finite entry, violated precondition."""


class NotSPDError(ValueError):
    """A matrix that must be symmetric positive definite is not."""


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap."""


class InstabilityError(FloatingPointError):
    """A time step produced non-finite state values."""
