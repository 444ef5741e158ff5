"""Exception hierarchy shared across the package."""


class CtptError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CtptError):
    """Operand shapes are incompatible with the requested operation."""


class ArgumentError(CtptError):
    """An argument violates a documented precondition."""


class ProtocolError(CtptError):
    """An ask/tell style protocol was used out of order or with bad data."""


class FormatError(CtptError):
    """A binary container is corrupt, truncated, or of the wrong version."""


class IngestionError(CtptError):
    """A dataset file failed validation during loading."""


class ConfigError(CtptError):
    """A configuration file or object is inconsistent."""


class SamplingError(CtptError):
    """Few-shot sampling cannot satisfy the request."""


class TrainingError(CtptError):
    """A training stage could not produce a usable result."""
