"""Exception and warning classes shared across the package."""


class WittenLatError(Exception):
    """Base class for all package errors."""


class InvalidInput(WittenLatError, ValueError):
    pass


class NondegeneracyViolation(WittenLatError):
    """A critical point has a (numerically) vanishing Hessian eigenvalue."""


class NoConvergence(WittenLatError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NotSeparated(WittenLatError):
    pass


class BoxTooSmall(WittenLatError):
    pass


class NoRelevantSaddle(WittenLatError):
    pass


class TooLarge(WittenLatError):
    pass


class ShapeMismatch(WittenLatError, ValueError):
    pass


class DegenerateFit(WittenLatError):
    pass


class RadiusTooSmall(WittenLatError):
    pass


class PhasePositivityViolated(WittenLatError):
    pass


class ConfigInvalid(WittenLatError):
    pass


class ComponentAmbiguous(WittenLatError):
    pass


class RateOverflow(WittenLatError):
    pass


class BoxLeak(RateOverflow):
    """A walker tried to leave the validated lattice box."""


class InsufficientData(WittenLatError):
    pass


class AllCensored(InsufficientData):
    pass


class ConfigError(WittenLatError):
    def __init__(self, message, field=None, line=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.field = field
        self.line = line


class OverflowWarning(RuntimeWarning):
    pass


class UnderflowWarning(RuntimeWarning):
    pass


class QualityWarning(RuntimeWarning):
    pass
