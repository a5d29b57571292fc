"""Exception types shared across the package."""


class SvcselError(Exception):
    """Base class for package-specific errors."""


class NumericalError(SvcselError):
    """A linear-algebra primitive failed, typically a Cholesky factorization.

    ``pivot`` is the 1-based index of the offending leading minor when known.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SingularDesignError(NumericalError):
    """The (whitened) design matrix is rank deficient."""


class ConvergenceError(SvcselError):
    """An iterative solver exhausted its iteration budget.

    ``last_iterate`` carries the final iterate for inspection.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class LineSearchError(SvcselError):
    """Non-finite objective or gradient encountered during a search.

    ``best_x``/``best_f`` carry the best feasible point seen before failure.
    """

    def __init__(self, message, best_x=None, best_f=None):
        super().__init__(message)
        self.best_x = best_x
        self.best_f = best_f
