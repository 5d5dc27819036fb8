"""Exception hierarchy shared by every module in the package."""


class HerdDiffError(Exception):
    """Base class for all package errors."""


class ValidationError(HerdDiffError, ValueError):
    pass


class EmptyVector(ValidationError):
    pass


class NegativeEntry(ValidationError):
    pass


class SumOutOfTolerance(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class BetaOutOfRange(ValidationError):
    pass


class BadMaskIndex(ValidationError):
    pass


class BadTimeRange(ValidationError):
    pass


class EmptySampleSet(ValidationError):
    pass


class NonFiniteWeight(HerdDiffError, FloatingPointError):
    """A herding weight became NaN or infinite."""


class ZeroMassPosterior(HerdDiffError):
    """The requested (x_t, x_0, t) combination has probability zero."""


class AllZeroProbability(HerdDiffError):
    pass


class EnumerationCapExceeded(HerdDiffError):
    pass


class ModelFailure(HerdDiffError):
    """A reverse model raised or returned an invalid distribution."""
