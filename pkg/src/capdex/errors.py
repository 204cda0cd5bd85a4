"""Shared exception types.

The CLI maps ConfigError (and bad user input generally) to exit code 1 and
DataError (contract violations in supplied data) to exit code 2.
"""


class CapdexError(Exception):
    """Base class for package errors."""


class ConfigError(CapdexError):
    """Invalid configuration, arguments, or missing input files."""


class DataError(CapdexError):
    """Input data violates a documented contract."""
