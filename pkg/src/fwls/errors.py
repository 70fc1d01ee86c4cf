"""Exception hierarchy for the fwls package."""


class FwlsError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(FwlsError, ValueError):
    """Array shapes or model/feature counts do not agree."""


class NonFiniteData(FwlsError, ValueError):
    """A NaN or Inf was found where finite values are required."""


class SingularSystem(FwlsError, ArithmeticError):
    """The regularized normal equations could not be factorized."""


class DegenerateUpdate(FwlsError, ArithmeticError):
    """A rank-1 inverse update hit a near-zero denominator; re-solve from scratch."""


class TrainingDiverged(FwlsError, ArithmeticError):
    """An iterative fit produced non-finite parameters."""


class AlignmentError(FwlsError, ValueError):
    """Row streams that must be aligned row-for-row do not match."""


class StateFileError(FwlsError, ValueError):
    """A persisted accumulator file could not be decoded."""


class BadMagic(StateFileError):
    pass


class UnsupportedVersion(StateFileError):
    pass


class TruncatedFile(StateFileError):
    pass


class ChecksumMismatch(StateFileError):
    pass


class CsvFormatError(FwlsError, ValueError):
    """A CSV input failed to parse; the message carries row/column context."""
