"""Exception and warning types shared across the package.

Every error raised on bad input derives from ``DataError`` so the CLI can
map it to exit code 2; ``InternalError`` maps to exit code 3.
"""


class VlscoreError(Exception):
    """Base class for all package errors."""


class DataError(VlscoreError):
    """Invalid or inconsistent input data."""


class InternalError(VlscoreError):
    """An internal invariant was violated; indicates a bug, not bad input."""


# hierarchy
class CycleDetectedError(DataError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class UnknownLabelError(DataError):
    def __init__(self, label):
        self.label = label
        super().__init__(f"unknown label: {label!r}")


class DuplicateFgAssignmentError(DataError):
    pass


class DuplicateEdgeWarning(UserWarning):
    pass


class EmptyCgClassWarning(UserWarning):
    pass


# tensor store
class IoFailureError(DataError):
    pass


class BadMagicError(DataError):
    pass


class UnsupportedVersionError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class ShapeOverflowError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class BoxOutOfBoundsError(ParseError):
    pass


class LabelMissingForBoxError(ParseError):
    pass


class KeyMismatchError(DataError):
    def __init__(self, index, matrix_key, record_key):
        self.index = index
        super().__init__(
            f"row {index}: matrix key {matrix_key!r} != record id {record_key!r}"
        )


# scoring
class DimMismatchError(DataError):
    pass


class ZeroNormRowError(DataError):
    def __init__(self, row_index):
        self.row_index = row_index
        super().__init__(f"zero-norm embedding row at index {row_index}")


class ZeroNormMeanError(DataError):
    pass


class MissingFgEmbeddingError(DataError):
    pass


class MissingClassColumnError(DataError):
    pass


# metrics
class LengthMismatchError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class NoPositivesError(DataError):
    pass


class DegenerateConstantInputError(DataError):
    pass


class MissingEmbeddingError(DataError):
    pass


class MissingBoxesError(DataError):
    pass


# retrieval bench
class NoCaptionsError(DataError):
    pass


class NoLabelsError(DataError):
    pass


class NoReplaceableSpanError(DataError):
    pass


class EmptyReplacementPoolError(DataError):
    pass


# freq analysis
class EmptyLexiconError(DataError):
    pass


class MissingLeafCountError(DataError):
    pass


# synth worlds
class DimTooSmallError(DataError):
    pass
