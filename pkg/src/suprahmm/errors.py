"""Exception types raised across the package."""


class SuprahmmError(Exception):
    """Base class for all package errors."""


class EmptyInputError(SuprahmmError, ValueError):
    pass


class TooShortError(SuprahmmError, ValueError):
    pass


class AudioFormatError(SuprahmmError, ValueError):
    pass


class ConfigError(SuprahmmError, ValueError):
    """Invalid model or run configuration."""


class DimensionMismatchError(SuprahmmError, ValueError):
    pass


class NonFiniteObservationError(SuprahmmError, ValueError):
    pass


class DegenerateSegmentError(SuprahmmError, ValueError):
    pass


class InvalidWeightError(SuprahmmError, ValueError):
    pass


class UndefinedStatisticError(SuprahmmError, ArithmeticError):
    pass


class ManifestError(SuprahmmError, ValueError):
    pass


class SplitError(SuprahmmError, ValueError):
    pass


class DocumentError(SuprahmmError, ValueError):
    """A serialized document is malformed or has the wrong schema."""
