"""Exception hierarchy shared by every trendlab module."""


class TrendLabError(Exception):
    """Base class for all library errors."""


class ArgumentError(TrendLabError, ValueError):
    """A caller passed an argument outside the documented domain."""


class ValidationError(TrendLabError, ValueError):
    """Input data violates a structural invariant."""


class ParseError(ValidationError):
    """A data file could not be parsed."""

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


class NumericError(TrendLabError, ArithmeticError):
    """A numerical routine failed (NaN, divergence, singular system)."""


class BudgetError(TrendLabError):
    """The oracle refused a request because the query budget ran out.

    ``partial`` carries whatever knowledge had been gathered before the
    refusal, so callers can still persist a partial result.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class AuthError(TrendLabError):
    """The oracle rejected the API key."""


class TransportError(TrendLabError):
    """Network failure talking to a remote oracle."""

    def __init__(self, message, retries=0):
        super().__init__(f"{message} (after {retries} retries)")
        self.retries = retries
