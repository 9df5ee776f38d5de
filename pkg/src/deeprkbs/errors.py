"""Exception types shared across the package."""


class RKBSError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(RKBSError, ValueError):
    pass


class KindMismatch(RKBSError, ValueError):
    pass


class NegativeIndex(RKBSError, ValueError):
    pass


class NotUnitBall(RKBSError, ValueError):
    pass


class UnsupportedBasis(RKBSError, TypeError):
    pass


class EmptyGrid(RKBSError, ValueError):
    pass


class AtomBudgetExceeded(RKBSError, RuntimeError):
    pass


class Infeasible(RKBSError, RuntimeError):
    """Raised when an interpolation problem cannot be met within tolerance."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer

    def __str__(self):
        msg = super().__str__()
        if self.layer is not None:
            return f"layer {self.layer}: {msg}"
        return msg


class DivergenceDetected(RKBSError, RuntimeError):
    pass


class CapExceeded(RKBSError, ValueError):
    pass


class FormatError(RKBSError, ValueError):
    """Malformed or unsupported model/config file."""
