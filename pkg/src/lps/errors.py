"""Exception hierarchy shared by every LPS module."""


class LPSError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class UsageError(LPSError):
    exit_code = 1


class DomainError(LPSError, ValueError):
    """A value fell outside the domain of a density, kernel or elementary op."""

    exit_code = 2


class ParseError(LPSError):
    exit_code = 2


class ConfigurationError(LPSError):
    exit_code = 2


class MetricError(LPSError, ValueError):
    exit_code = 2


class InferenceError(LPSError):
    exit_code = 3


class TrainingError(LPSError):
    exit_code = 3
