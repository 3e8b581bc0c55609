"""Exception types shared by the toolkit.

Every class carries the process exit code the command line maps it to.
"""


class ForecastError(Exception):
    """Base class for errors raised by the toolkit."""

    exit_code = 1


class DimensionError(ForecastError, ValueError):
    """Shapes of two operands do not fit together."""

    def __init__(self, what, *shapes):
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{what}: {shown}" if shown else what)
        self.shapes = shapes


class UsageError(ForecastError):
    """The API was called in a way it does not support."""

    exit_code = 2


class ConfigError(ForecastError):
    """A configuration field is missing, unparsable or out of range."""

    exit_code = 2

    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field


class DataError(ForecastError):
    """Input data could not be read or is unusable."""

    exit_code = 3

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class NumericError(ForecastError):
    """A computation produced non-finite values or failed to converge."""

    exit_code = 4


class CompatibilityError(ForecastError):
    """A checkpoint does not match the data or the requested analysis."""

    exit_code = 5
