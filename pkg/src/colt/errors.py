"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numerical failures exit 3.
"""


class ColtError(Exception):
    """Base class for errors raised by this package."""


class DataError(ColtError):
    """Malformed, inconsistent, or incomplete input data."""


class NumericalError(ColtError):
    """Non-finite values or divergence during optimization."""


class UsageError(ColtError):
    """Invalid flag/config combination reported by the CLI."""
