"""Exception hierarchy.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class EmoAnonError(Exception):
    pass


class DataError(EmoAnonError, ValueError):
    """Malformed input: bad files, mismatched dimensions, degenerate vectors."""


class DimensionError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class NumericalError(EmoAnonError, ArithmeticError):
    """Training diverged or produced non-finite values."""
