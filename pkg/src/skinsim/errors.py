"""Exception hierarchy.

Two branches matter for the CLI exit-code contract: bad input (exit 1) and
numerical failure of an otherwise well-posed computation (exit 2).
"""


class SkinsimError(Exception):
    """Base class for all package errors."""


class InputError(SkinsimError):
    """Malformed input: files, schemas, shapes, out-of-range parameters."""


class NumericalError(SkinsimError):
    """A solve or material evaluation failed numerically."""


class InvertedElementError(NumericalError):
    """Deformation gradient with non-positive determinant where forbidden."""

    def __init__(self, message, cubature_index=None):
        super().__init__(message)
        self.cubature_index = cubature_index


class LineSearchError(NumericalError):
    """Backtracking line search shrank below its step floor."""


class NonSpdSystemError(NumericalError):
    """Projected Newton system was not positive definite."""


class TrainingDivergedError(NumericalError):
    """A training loop produced non-finite loss or parameters."""
