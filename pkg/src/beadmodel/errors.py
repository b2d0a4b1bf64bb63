"""Exception types shared across the package.

Exit-code mapping used by the CLI: usage errors are 2, DomainError 3,
AccuracyError 4, I/O problems 5.
"""


class DomainError(ValueError):
    """A parameter lies outside the mathematical domain of an operation."""


class AccuracyError(ArithmeticError):
    """A numerical routine could not certify the requested tolerance."""


class GraphFormatError(ValueError):
    """A graph specification file failed to parse or validate."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
