"""Exception types shared across the toolkit."""


class CssepError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(CssepError, ValueError):
    """An argument violates a documented precondition (shape, range, ...)."""


class DegenerateInputError(InvalidInputError):
    """Input is formally valid but admits no meaningful result (e.g. all-zero)."""


class InvalidGeometryError(InvalidInputError):
    """A point lies outside the room or the geometry is otherwise unusable."""


class ConfigurationError(CssepError):
    """A configuration is inconsistent or admits no valid sample."""


class UndefinedMetricError(CssepError, ValueError):
    """A metric is undefined for the given reference (e.g. zero signal)."""


class CheckpointError(CssepError):
    """A checkpoint file is missing, malformed, or incompatible."""


class DataError(CssepError, IOError):
    """A corpus or manifest could not be read; message lists offending files."""
