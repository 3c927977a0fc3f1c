"""
Exception types raised by nextvisit.

The command line maps them to process exit codes, see
:func:`nextvisit.core.app.main`.
"""

__all__ = [
    'NextVisitError',
    'ConfigError',
    'DataError',
    'NumericError',
    'UndefinedMetricError',
]


class NextVisitError(Exception):

    """Base class for all errors raised deliberately by nextvisit."""

    exit_code = 1


class ConfigError(NextVisitError, ValueError):

    """Invalid or inconsistent configuration."""

    exit_code = 2


class DataError(NextVisitError, ValueError):

    """Missing artifacts or input data that cannot be processed."""

    exit_code = 3


class NumericError(NextVisitError, ArithmeticError):

    """Non-finite values in activations, gradients or losses."""

    exit_code = 4


class UndefinedMetricError(NextVisitError, ValueError):

    """A metric is not defined for the given input, e.g. only one class is
    present. Callers that report such metrics catch this and emit ``None``."""

    exit_code = 3
