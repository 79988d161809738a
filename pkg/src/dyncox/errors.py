"""Exception types shared across the package.

Two failure families matter to callers: bad input (files, schemas, argument
ranges) and numerical breakdown during estimation. The CLI maps them to exit
codes 1 and 2 respectively.
"""


class DyncoxError(Exception):
    """Base class for package errors."""


class ValidationError(DyncoxError):
    """Malformed input: files, schemas, argument ranges, inconsistent shapes."""


class NumericalError(DyncoxError):
    """Numerical failure: overflow, singular systems, failed solves."""
