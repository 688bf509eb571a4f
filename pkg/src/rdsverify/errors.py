"""Exception hierarchy shared by all modules."""


class RdsError(Exception):
    """Base class for all package errors."""


class DataError(RdsError):
    """Bad input data. The CLI maps these to exit code 2."""


class ParseError(DataError):
    pass


class InvariantError(DataError):
    pass


class MissingFileError(DataError):
    pass


class DuplicateEntryError(DataError):
    pass


class ContentLengthError(DataError):
    pass


class InsufficientWritersError(DataError):
    pass


class InsufficientGenuineError(DataError):
    pass


class EmptySequenceError(DataError):
    pass


class EmptyPopulationError(DataError):
    pass


class SequenceTooShortError(DataError):
    pass


class DegenerateBatchError(RdsError):
    pass


class ShapeError(RdsError, ValueError):
    pass


class NotScalarError(RdsError, ValueError):
    pass


class GraphFreedError(RdsError, RuntimeError):
    """Raised when backward is called twice on the same graph."""
