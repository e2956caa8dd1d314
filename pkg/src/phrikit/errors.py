"""Exception types shared across the package.

The CLI maps these onto exit codes: ParameterError -> 1 (usage),
NumericError -> 2, OutputExistsError and other OSError -> 3.
"""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or diverged."""


class OutputExistsError(OSError):
    """Refusing to overwrite an existing output without --force."""
