"""Exception types shared across the package.

The CLI maps these onto exit codes: validation errors exit 1, I/O and
format errors exit 2, numeric failures exit 3.
"""


class ValidationError(ValueError):
    """Invalid argument values, mismatched shapes, or violated preconditions."""


class FormatError(Exception):
    """Malformed file content (bad magic, missing fields, truncation).

    ``offset`` holds the byte offset of the problem when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(ArithmeticError):
    """Non-finite values or numeric breakdown inside an iterative procedure."""
