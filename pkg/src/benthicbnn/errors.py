"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes do not conform."""


class UsageError(RuntimeError):
    """An API was called out of order (e.g. backward without a forward pass)."""


class TrainingError(RuntimeError):
    """Optimisation produced non-finite values."""


class ParseError(ValueError):
    """A file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigurationError(ValueError):
    """Invalid configuration or arguments."""


class OutOfBoundsError(IndexError):
    """A window or track leaves the raster."""


class NodataError(ValueError):
    """A window contains nodata cells."""


class DegenerateDataError(ValueError):
    """Data has no spread (e.g. zero variance)."""


class DataError(ValueError):
    """Input data violates a numeric precondition."""


class BalancingError(ValueError):
    """Classes cannot be balanced because some are absent."""


class ExhaustionError(ValueError):
    """Not enough items remain to satisfy a selection."""


class ModelLoadError(ValueError):
    """A persisted model does not match the expected architecture."""
