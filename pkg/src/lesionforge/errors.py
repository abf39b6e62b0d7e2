"""Exception hierarchy shared by every lesionforge module."""


class LesionForgeError(Exception):
    """Base class for all errors raised by lesionforge."""


class MalformedHeader(LesionForgeError):
    pass


class UnsupportedDatatype(LesionForgeError):
    pass


class DimensionMismatch(LesionForgeError, ValueError):
    pass


class OutOfBounds(LesionForgeError, IndexError):
    pass


class IoFailure(LesionForgeError, OSError):
    pass


class ParamOutOfRange(LesionForgeError, ValueError):
    pass


class RetryExhausted(LesionForgeError):
    pass


class NoValidLocation(LesionForgeError):
    pass


class NotConverged(LesionForgeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class EmptyRegion(LesionForgeError):
    pass


class DegenerateData(LesionForgeError, ValueError):
    pass


class NonFinite(LesionForgeError, ValueError):
    pass


class EmptyClass(LesionForgeError):
    pass


class ZeroNormVector(LesionForgeError, ValueError):
    pass


class NoContributingItems(LesionForgeError):
    pass


class ConfigError(LesionForgeError):
    pass
