"""Error hierarchy.

Every failure surfaced by the library is a ``GopMixupError`` carrying a short
``category`` string and the process ``exit_code`` the CLI maps it to.
"""


class GopMixupError(Exception):
    """Base class for all library errors."""
    category = "error"
    exit_code = 1


class DataValidationError(GopMixupError, ValueError):
    """Input data violates a format or domain invariant."""
    category = "data_validation"
    exit_code = 3


class DimensionMismatchError(DataValidationError):
    category = "dimension_mismatch"


class NonFiniteValueError(DataValidationError):
    category = "non_finite"


class RowSumError(DataValidationError):
    category = "row_sum"


class AlignmentError(DataValidationError):
    category = "alignment"


class UnknownPhoneError(DataValidationError):
    category = "unknown_phone"


class FormatError(DataValidationError):
    """Malformed, truncated or unparsable file."""
    category = "format"


class DuplicateKeyError(DataValidationError):
    category = "duplicate_key"


class ScoreRangeError(DataValidationError):
    category = "score_range"


class EmptyPoolError(DataValidationError):
    category = "empty_pool"


class EmptyLexiconError(DataValidationError):
    category = "empty_lexicon"


class CoverageError(DataValidationError):
    """No lexicon word can be built from the available pools."""
    category = "coverage"


class GeometryError(DataValidationError):
    """Input too short for the convolution/pooling stack."""
    category = "geometry"


class ConfigError(DataValidationError):
    category = "config"


class ShapeMismatchError(DataValidationError):
    category = "shape_mismatch"


class TraceMismatchError(DataValidationError):
    category = "trace_mismatch"


class EmptyDatasetError(DataValidationError):
    category = "empty_dataset"


class NumericError(GopMixupError, ArithmeticError):
    """A numeric computation produced an undefined result."""
    category = "numeric"
    exit_code = 4


class DegenerateCorrelationError(NumericError):
    """Correlation is undefined because one vector is constant."""
    category = "degenerate_correlation"


class NonFiniteLossError(NumericError):
    category = "non_finite_loss"
