"""Exception hierarchy for closedloop. Every error raised by the library derives from ClosedLoopError."""

from typing import Any, Optional


class ClosedLoopError(Exception):
    """Root of all closedloop errors."""


# numerics
class NonFiniteField(ClosedLoopError):
    pass


class EmptyWindow(ClosedLoopError):
    pass


class NonPositiveValue(ClosedLoopError):
    pass


class ToleranceNotReached(ClosedLoopError):
    pass


class BracketInvalid(ClosedLoopError):
    pass


# distmap
class InvalidDistribution(ClosedLoopError):
    pass


class IncompatibleVariants(ClosedLoopError):
    pass


class DegenerateMetric(ClosedLoopError):
    pass


class NoProbes(ClosedLoopError):
    pass


class NonFiniteIntegrand(ClosedLoopError):
    pass


# operators
class ForwardUnavailable(ClosedLoopError):
    pass


class ModulusGapViolated(ClosedLoopError):
    pass


class TargetUnreachable(ClosedLoopError):
    pass


class PotentialUnavailable(ClosedLoopError):
    pass


# equilibrium
class MaxIterExceeded(ClosedLoopError):
    """Iteration budget exhausted. `best` holds the last (best) iterate."""

    def __init__(self, message: str, best: Optional[Any] = None):
        super().__init__(message)
        self.best = best


class NoContraction(ClosedLoopError):
    pass


class TooFewIterates(ClosedLoopError):
    pass


# flows
class StepTooLarge(ClosedLoopError):
    pass


class DomainViolation(ClosedLoopError):
    pass


class EquilibriumMismatch(ClosedLoopError):
    pass


class NonSmoothA(ClosedLoopError):
    pass


class ConditionViolated(ClosedLoopError):
    pass


# curvature
class InvalidSpace(ClosedLoopError):
    pass


class SamePoint(ClosedLoopError):
    pass


class DimensionMismatch(ClosedLoopError):
    pass


class NoConvergence(ClosedLoopError):
    pass


class EqualMeasures(ClosedLoopError):
    pass


# config
class SchemaError(ClosedLoopError):
    """Malformed scenario config. `path` is the dotted path of the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ConstraintError(ClosedLoopError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
