"""Exception hierarchy shared by the library and the CLI."""


class SFPError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(SFPError, ValueError):
    """An argument lies outside the domain of an operation."""


class NumericError(DomainError, ArithmeticError):
    """A numerical step cannot proceed (e.g. every cost in a row is infinite)."""


class DataError(SFPError):
    """Input data is unreadable or malformed."""


class SchemaError(DataError):
    """Input data does not match the expected columns or types."""
