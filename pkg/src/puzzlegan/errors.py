"""Exception types shared across the package.

The CLI maps these onto exit codes: ValidationError -> 1,
NumericalError (and anything else unexpected) -> 2.
"""


class PuzzleGanError(Exception):
    """Base class for all package errors."""


class ValidationError(PuzzleGanError):
    """Bad inputs: malformed files, inconsistent specs, out-of-range ids."""


class NumericalError(PuzzleGanError):
    """Numerical failure: non-finite losses, non-PSD matrices beyond tolerance."""
