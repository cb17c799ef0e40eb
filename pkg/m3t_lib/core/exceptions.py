"""
Exception hierarchy for the M3T library.

Every error raised on purpose by the library derives from `M3TError` and from
the built-in exception that best describes it, so callers may catch either.
"""


class M3TError(Exception):
    """Base class for all library errors."""


class DimensionError(M3TError, ValueError):
    """Raised when tensor shapes do not agree for an operation."""


class NumericError(M3TError, FloatingPointError):
    """Raised when an operation receives non-finite values."""


class ContractError(M3TError, RuntimeError):
    """Raised when an API is used outside its contract (tape misuse, missing gradients, ...)."""


class TokenIndexError(M3TError, IndexError):
    """Raised when a token id is outside the vocabulary or embedding table."""


class SequenceLengthError(M3TError, ValueError):
    """Raised when a sequence exceeds the configured maximum length."""


class FeatureFormatError(M3TError, ValueError):
    """Raised when an M3TF feature file is malformed."""


class CheckpointFormatError(M3TError, ValueError):
    """Raised when an M3TC checkpoint file is malformed."""


class ImageFormatError(M3TError, ValueError):
    """Raised when an image file cannot be decoded."""


class ConfigError(M3TError, ValueError):
    """Raised for invalid configuration values or forbidden flag combinations."""


class CorpusError(M3TError, ValueError):
    """Raised for malformed corpus files or unusable splits."""


class MetricError(M3TError, ValueError):
    """Raised when a metric's preconditions are not met."""
