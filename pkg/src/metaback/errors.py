"""Exception types shared across the package."""


class MetabackError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(MetabackError):
    """Array dimensions disagree with the model or batch contract."""


class BadMagicError(MetabackError):
    """IDX header is not a supported magic number."""


class TruncatedFileError(MetabackError):
    """IDX file is shorter than its header declares."""


class DimensionMismatchError(MetabackError):
    """Declared shape disagrees with the payload or with an expected layout."""


class InsufficientSamplesError(MetabackError):
    """A task requests more samples of a class than the corpus holds."""


class NonPositiveRadiusError(MetabackError):
    """Ball constraint constructed with a non-positive squared radius."""


class DivergenceError(MetabackError):
    """Training produced a non-finite loss or parameter vector."""


class CgBreakdownError(MetabackError):
    """Conjugate gradient produced a non-finite iterate."""


class EmptyInputError(MetabackError):
    """An operation that needs at least one element received none."""


class MissingDataError(MetabackError):
    """A required dataset directory or file is absent."""


class InvalidConfigError(MetabackError):
    """Unknown, duplicated, or ill-typed configuration key."""
