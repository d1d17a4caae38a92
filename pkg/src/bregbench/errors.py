"""Exception hierarchy shared by every module of the package."""


class BenchError(Exception):
    """Base class for all errors raised by bregbench."""


class InvalidInputError(BenchError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(BenchError, ValueError):
    """Array dimensions do not agree."""


class NumericDomainError(BenchError, ArithmeticError):
    """A computation left its numeric domain (NaN, log of zero, division by zero)."""


class SingularGradientError(NumericDomainError):
    """The derivative is undefined at the requested point."""


class FormatError(BenchError, ValueError):
    """A dataset or output file is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(BenchError, ValueError):
    """An experiment or generator configuration is invalid."""
