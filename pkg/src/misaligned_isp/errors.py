"""Exception types shared across the package."""


class ISPError(Exception):
    """Base class for all package errors."""


class DimensionError(ISPError, ValueError):
    """Array/tensor shapes are incompatible with the requested operation."""


class MetadataError(ISPError, ValueError):
    """Raw metadata (Bayer pattern, levels) is missing or invalid."""


class ParameterError(ISPError, ValueError):
    """A numeric parameter is out of its admissible range."""


class ConfigError(ISPError, ValueError):
    """Inconsistent or incomplete configuration."""


class LoadError(ISPError, OSError):
    """An external artifact (weights, checkpoint, data file) could not be loaded."""


class UndefinedMetricError(ISPError, ValueError):
    """A metric has no defined value for the given inputs (e.g. empty mask)."""


class EmptyMaskWarning(UserWarning):
    """A masked reduction was evaluated over an empty mask."""
