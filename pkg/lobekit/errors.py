"""
Exception hierarchy for lobekit.

Every error belongs to one of three families, each mapped to a CLI exit code.
"""

from typing import Optional


class LobekitError(Exception):
    """Base class for all toolkit errors."""
    exit_code = 1


class ConfigError(LobekitError):
    """Invalid or inconsistent configuration."""
    exit_code = 2


class DataError(LobekitError):
    """Unreadable, malformed or semantically invalid input data."""
    exit_code = 3


class NumericError(LobekitError):
    """Numerical failure during differentiation or training."""
    exit_code = 4


class InvalidConfig(ConfigError, ValueError):
    pass


# Volume IO
class MalformedHeader(DataError, ValueError):
    pass


class UnsupportedElementType(DataError, ValueError):
    pass


class SizeMismatch(DataError, ValueError):
    pass


class IoFailure(DataError, OSError):
    pass


class InvalidLabel(DataError, ValueError):
    pass


class RegionOutOfBounds(DataError, IndexError):
    pass


# Preprocessing
class DegenerateHistogram(DataError, ValueError):
    pass


class NoLungCandidate(DataError):
    pass


# Shapes
class ShapeMismatch(DataError, ValueError):
    pass


class OddSpatialDim(DataError, ValueError):
    pass


# Training
class EmptyDataset(DataError):
    pass


class NonFiniteLoss(NumericError):
    """Raised when a training step produces a NaN or infinite loss."""

    def __init__(self, message: str, sample_id: Optional[str] = None, epoch: Optional[int] = None):
        super().__init__(message)
        self.sample_id = sample_id
        self.epoch = epoch


class NotScalar(NumericError, ValueError):
    pass


class DetachedGraph(NumericError):
    pass


class MissingGradient(NumericError):
    pass
