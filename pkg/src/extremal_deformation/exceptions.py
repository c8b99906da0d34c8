"""Exception types raised across the package."""


class DeformationError(Exception):
    """Base class for all package errors."""


class FormatError(DeformationError):
    """Input files do not match the expected layout."""


class ParseError(FormatError):
    """A cell could not be parsed as a finite number."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DomainError(DeformationError, ValueError):
    """A parameter lies outside its admissible range."""


class ConfigError(DeformationError, ValueError):
    """A run configuration is inconsistent or incomplete."""


class NumericError(DeformationError, ArithmeticError):
    """A numerical routine failed (non-finite value, singular matrix, ...)."""
