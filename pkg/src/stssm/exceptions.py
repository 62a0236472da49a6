"""Exception types shared across the package."""


class StssmError(Exception):
    """Base class for all package errors."""


class ShapeError(StssmError, ValueError):
    """Raised when array extents are inconsistent with an operation."""


class FormatError(StssmError, ValueError):
    """Raised when a serialized byte stream is malformed."""


class ContractError(StssmError, ValueError):
    """Raised when an argument violates a documented precondition."""


class StabilityError(StssmError, ValueError):
    """Raised when state-transition parameters would be unstable (a >= 0)."""


class NumericError(StssmError, ArithmeticError):
    """Raised when a computation produces non-finite values."""


class UnsupportedOpError(StssmError, RuntimeError):
    """Raised when the tape holds an op with no backward rule."""
