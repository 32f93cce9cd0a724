"""Exception hierarchy for rydbergfdm."""

from __future__ import annotations


class RydbergFDMError(Exception):
    """Base class for all errors raised by rydbergfdm."""


class ConfigError(RydbergFDMError):
    """Invalid or missing configuration."""


class FieldError(RydbergFDMError, ValueError):
    """An MWField violates its construction invariants."""


class ApproximationError(RydbergFDMError, ValueError):
    """The small-bin envelope approximation premise does not hold."""


class SingularSystemError(RydbergFDMError):
    """The trace-constrained Liouvillian is numerically rank-deficient."""


class ShapeError(RydbergFDMError, ValueError):
    """Array, label or frame dimensions do not match."""


class FramingError(RydbergFDMError, ValueError):
    """A frame sequence has a malformed or truncated header."""


class DatasetFormatError(RydbergFDMError):
    """A dataset file is malformed or fails its checksum."""


class TrainingError(RydbergFDMError):
    """Training cannot proceed with the given data."""


class FitConvergenceWarning(UserWarning):
    """The simplex fit stopped at its iteration cap before converging."""


class CheckpointError(RydbergFDMError):
    """A model checkpoint is missing, malformed or inconsistent with its manifest."""
