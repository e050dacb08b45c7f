"""Exception hierarchy shared across the package.

The CLI maps :class:`ConfigError` (and subclasses) to exit code 1 and
:class:`DataError` (and subclasses) to exit code 2.
"""


class UltrError(Exception):
    """Base class for all package errors."""


class ConfigError(UltrError, ValueError):
    """Invalid parameters or configuration."""


class DomainError(ConfigError):
    """Argument outside the mathematical domain of a function."""


class ExperimentError(ConfigError):
    """An intervention experiment cannot be run as configured."""


class DataError(UltrError, ValueError):
    """Input data is inconsistent or malformed."""


class ParseError(DataError):
    """A text file could not be parsed."""

    def __init__(self, message, lineno=None, path=None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(where + message)


class EstimationError(DataError):
    """Propensities cannot be estimated from the supplied data."""
