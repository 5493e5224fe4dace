"""Exception hierarchy shared across the pipeline."""


class GHGError(Exception):
    """Base class for all package errors."""


class DomainError(GHGError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DataError(GHGError, ValueError):
    """Input data is malformed or inconsistent with its schema."""


class IntegrityError(DataError):
    """Duplicate or conflicting keys in a dataset."""


class ConfigError(GHGError, ValueError):
    """Invalid configuration value."""


class NumericError(GHGError, ArithmeticError):
    """A numerical routine failed to produce a finite result."""
