"""Exception types shared across the package."""


class PoemLabError(Exception):
    pass


class NotPositiveDefinite(PoemLabError, ValueError):
    pass


class NotSymmetric(PoemLabError, ValueError):
    pass


class EmptyPool(PoemLabError, ValueError):
    pass


class NonFiniteGradient(PoemLabError, FloatingPointError):
    pass


class RejectionStall(PoemLabError, RuntimeError):
    pass


class DegenerateMu(PoemLabError, ValueError):
    pass


class BoundViolation(PoemLabError, ValueError):
    pass


class RegimeViolation(PoemLabError, ValueError):
    pass


class LengthMismatch(PoemLabError, ValueError):
    pass


class DimensionError(PoemLabError, ValueError):
    pass


class ConfigError(PoemLabError, ValueError):
    """Bad or missing configuration; `field` names the offending key when known."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
