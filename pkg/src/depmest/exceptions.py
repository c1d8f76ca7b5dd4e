"""Exception types shared across the package.

Callers (and the CLI exit-code mapping) distinguish two failure classes:
mis-specified inputs and genuine numerical breakdown.
"""


class UsageError(ValueError):
    """Invalid parameters, dimensions, or configuration supplied by the caller."""


class NumericError(ArithmeticError):
    """Numerical failure: singular or near-singular matrices, overflow, divergence."""
