"""Exception hierarchy shared by all modules."""


class SobError(Exception):
    """Base class for errors raised by sobalign."""


class InputError(SobError, ValueError):
    """Malformed or incompatible input (shapes, dimensions, indices)."""


class HistogramError(InputError):
    """A vector failed histogram validation (negative bins or bad l1 mass)."""


class FormatError(InputError):
    """A file could not be parsed into the expected structure."""


class NumericalError(SobError, ArithmeticError):
    """A numerical procedure could not produce a well-defined result."""


class EstimationError(NumericalError):
    """System identification failed, e.g. because the data is rank deficient."""
