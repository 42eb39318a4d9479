"""Exception types shared across the package."""


class TightpropError(Exception):
    """Base class for all library errors."""


class ParameterError(TightpropError, ValueError):
    """An argument is outside its documented domain."""


class DimensionError(TightpropError, ValueError):
    """Array shapes do not conform."""


class ParseError(TightpropError, ValueError):
    """A data file is malformed.

    ``field`` names the offending header field or section.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DivergenceError(TightpropError, ArithmeticError):
    """Training produced a non-finite loss."""
