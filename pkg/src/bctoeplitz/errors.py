"""Exception hierarchy shared by all modules."""


class BCError(Exception):
    """Base class for all errors raised by the package."""


class NonSymmetric(BCError):
    pass


class NotPositive(BCError):
    pass


class SingularIntermediate(BCError):
    """``I - F_k^2`` could not be inverted during the Levinson recursion."""


class SingularCorner(BCError):
    """The last block ``Y_{N-1}`` of the solution column is not invertible."""


class Singular(BCError):
    pass


class CflViolation(BCError):
    pass


class NegativeDensity(BCError):
    pass


class GridMismatch(BCError):
    pass


class EmptySigma(BCError):
    pass


class EmptySource(BCError):
    pass


class NonPositiveGram(BCError):
    pass


class SolverFailure(BCError):
    pass


class AssemblyFailure(BCError):
    pass


class SolveFailure(BCError):
    pass
