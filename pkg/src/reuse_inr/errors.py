"""Exception hierarchy shared by all reuse_inr modules.

Each class maps to one CLI exit code (see cli.py): usage 2, configuration 3,
data 4, corruption/format 5.
"""


class ReuseInrError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ReuseInrError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigurationError(ReuseInrError):
    """A config value is invalid, unknown, or inconsistent."""


class UsageError(ReuseInrError):
    """An API or CLI call violates its contract (bad arguments, bad order)."""


class DataError(ReuseInrError):
    """Input data is malformed (NaN weights, out-of-alphabet symbols, ...)."""


class FormatError(ReuseInrError):
    """A serialized artifact has the wrong layout (magic, version, sizes)."""


class CorruptionError(ReuseInrError):
    """A bitstream or file is structurally valid but internally inconsistent."""


class EvaluationError(ReuseInrError):
    """A metric cannot be computed from the given inputs."""
