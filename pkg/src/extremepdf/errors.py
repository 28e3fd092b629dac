"""Exception types raised across the package."""


class ExtremePdfError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(ExtremePdfError, ValueError):
    pass


class FactorizationFailure(ExtremePdfError, ArithmeticError):
    pass


class DuplicatePoint(ExtremePdfError, ValueError):
    pass


class ResolutionTooLarge(ExtremePdfError, ValueError):
    pass


class NonPositiveEigenvalue(ExtremePdfError, ArithmeticError):
    pass


class NoOverlap(ExtremePdfError, ValueError):
    """Two density estimates share no bin where both are positive."""


class NotMonotone(ExtremePdfError, ValueError):
    pass


class ObjectiveFailure(ExtremePdfError, RuntimeError):
    pass


class MapEvaluationFailure(ExtremePdfError, RuntimeError):
    pass


class CorruptCheckpoint(ExtremePdfError, ValueError):
    pass


class NonFiniteState(ExtremePdfError, ArithmeticError):
    pass


class MalformedTable(ExtremePdfError, ValueError):
    pass


class InvalidConfig(ExtremePdfError, ValueError):
    pass
