"""Exception hierarchy shared by every service.

Each error carries the process exit code the command line reports for it.
"""
from __future__ import annotations


class RefineGANError(Exception):
    """Base class for all domain errors."""

    exit_code: int = 2


class UsageError(RefineGANError):
    """Invalid command, flag or configuration value."""

    exit_code = 1


class DataError(RefineGANError):
    """Input data, file format or shape problem."""

    exit_code = 2


class MvolFormatError(DataError):
    """Malformed MVOL file."""


class MvolMagicError(MvolFormatError):
    """File does not start with the MVOL magic bytes."""


class MvolTruncatedError(MvolFormatError):
    """Header or payload shorter than the header promises."""


class MvolDtypeError(MvolFormatError):
    """Unknown dtype code in the header."""


class NonFiniteVoxelsError(DataError):
    """NaN or Inf found while ingesting voxels."""


class ShapeMismatchError(DataError):
    """Arrays that must agree in shape do not."""


class LabelRangeError(DataError):
    """Label value outside ``[0, class_count)``."""


class DegenerateStatisticsError(DataError):
    """Zero variance where a positive one is required."""


class DegenerateBatchError(DataError):
    """Fewer than two elements per channel in a normalization batch."""


class EmptyDatasetError(DataError):
    """No patients (or no slices) to work with."""


class LesionPlacementError(DataError):
    """A synthetic lesion does not fit inside the volume."""


class UndefinedDistanceError(DataError):
    """Surface distance requested for an empty mask."""


class ConfigMismatchError(DataError):
    """Checkpoint architecture differs from the requested configuration."""


class NetConfigError(DataError):
    """Network configuration violates the architecture's shape rules."""


class DivergenceError(RefineGANError):
    """A loss or gradient became NaN or Inf."""

    exit_code = 3


__all__ = [
    "RefineGANError",
    "UsageError",
    "DataError",
    "MvolFormatError",
    "MvolMagicError",
    "MvolTruncatedError",
    "MvolDtypeError",
    "NonFiniteVoxelsError",
    "ShapeMismatchError",
    "LabelRangeError",
    "DegenerateStatisticsError",
    "DegenerateBatchError",
    "EmptyDatasetError",
    "LesionPlacementError",
    "UndefinedDistanceError",
    "ConfigMismatchError",
    "NetConfigError",
    "DivergenceError",
]
