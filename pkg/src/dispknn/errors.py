"""Exception types raised across the package."""


class DispknnError(Exception):
    """Base class for all package errors."""


class ZeroVector(DispknnError, ValueError):
    pass


class TooFewPoints(DispknnError, ValueError):
    pass


class EmptySet(DispknnError, ValueError):
    pass


class DegenerateDraw(DispknnError, ArithmeticError):
    pass


class AllPointsDegenerate(DispknnError, ArithmeticError):
    pass


class NonFiniteGradient(DispknnError, ArithmeticError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite gradient at step {step}")


class InsufficientData(DispknnError, ValueError):
    pass


class BadShape(DispknnError, ValueError):
    pass


class EmptyIndex(DispknnError, ValueError):
    pass


class EmptyStore(DispknnError, ValueError):
    pass


class EmptyPartition(DispknnError, ValueError):
    pass


class LengthMismatch(DispknnError, ValueError):
    pass


class EmptyHits(DispknnError, ValueError):
    pass


class SizeMismatch(DispknnError, ValueError):
    pass


class FormatError(DispknnError, ValueError):
    """Raised when a binary file does not match the expected layout."""
