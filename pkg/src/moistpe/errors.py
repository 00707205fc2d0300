"""Exception hierarchy shared by every module of the package."""


class MoistPEError(Exception):
    """Base class for all package errors."""


class InvalidResolution(MoistPEError, ValueError):
    pass


class OutOfRange(MoistPEError, ValueError):
    pass


class ShapeMismatch(MoistPEError, ValueError):
    pass


class UnknownBC(MoistPEError, ValueError):
    pass


class ConstraintViolated(MoistPEError):
    """The vertically integrated divergence is far from zero."""


class NumericalFailure(MoistPEError):
    """Base for failures that map to the 'numerical' exit status."""


class CflViolation(NumericalFailure):
    pass


class EllipticDivergence(NumericalFailure):
    pass


class NonFinite(NumericalFailure):
    pass


class SingularSystem(NumericalFailure):
    pass


class EmptySeries(MoistPEError, ValueError):
    pass


class InsufficientMembers(MoistPEError, ValueError):
    pass


class LengthMismatch(MoistPEError, ValueError):
    pass


class ParseError(MoistPEError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(MoistPEError, ValueError):
    def __init__(self, key, reason=""):
        self.key = key
        super().__init__(f"{key}: {reason}" if reason else key)


class SnapshotError(MoistPEError, OSError):
    pass
