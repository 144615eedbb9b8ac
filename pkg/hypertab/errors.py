"""Exception hierarchy and CLI exit codes."""


class HyperTabError(Exception):
    """Base class for all errors raised by hypertab."""

    exit_code = 1


class ConfigError(HyperTabError):
    """Invalid or unknown configuration values."""

    exit_code = 2


class DataError(HyperTabError):
    """Unreadable, malformed or inconsistent data."""

    exit_code = 3


class SchemaError(DataError):
    """CSV header or cell contents do not match the schema."""


class UndefinedMetricError(DataError):
    """A metric is undefined for the given labels (e.g. a single class)."""


class NumericError(HyperTabError):
    """Non-finite values, failed gradient checks and similar numeric failures."""

    exit_code = 4


class UnmarkedTensorError(NumericError):
    """A gradient was requested for a tensor that was not marked as a parameter."""


class GradientCheckError(NumericError):
    """Analytic gradients disagree with finite differences."""
