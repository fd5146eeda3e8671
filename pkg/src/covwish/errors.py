"""Exception hierarchy and the CLI exit codes attached to each class."""


class CovWishError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(CovWishError, ValueError):
    """Arguments that do not conform (shapes, ranks, missing inputs)."""

    exit_code = 2


class ConfigError(CovWishError, ValueError):
    """A configuration that cannot produce a proper sampler."""

    exit_code = 2


class DataError(CovWishError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class DomainError(CovWishError, ValueError):
    """Numeric input outside the domain of an operation (singular, non-PD...)."""

    exit_code = 4


class NumericError(CovWishError, ArithmeticError):
    """A numerical failure inside a sampler or decomposition."""

    exit_code = 4
