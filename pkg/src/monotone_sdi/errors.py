"""Exception types shared across the package."""


class MonotoneSDIError(Exception):
    """Base class for all library errors."""


class UnsupportedKind(MonotoneSDIError):
    """Resolvent has no closed form and the guarded 1-D solver failed."""


class OutsideDomain(MonotoneSDIError):
    """Point is not in the operator domain (up to the membership tolerance)."""


class NoPotential(MonotoneSDIError):
    """Operator was not declared as a subdifferential."""


class NotStronglyConvex(MonotoneSDIError):
    """Potential has no positive strong-convexity modulus."""


class NotStronglyMonotone(MonotoneSDIError):
    """Operator has no positive strong-monotonicity modulus."""


class EmptyZeroSet(MonotoneSDIError):
    """The operator has no zeros."""


class EmptyIntersection(MonotoneSDIError):
    """Sampling region does not intersect the operator domain."""


class ReductionUnsupported(MonotoneSDIError):
    """Declared domain geometry is inconsistent; cannot reduce."""


class NonFiniteState(MonotoneSDIError):
    """A simulated state coordinate became non-finite."""


class InitialConditionOutsideDomain(MonotoneSDIError):
    """Configured x0 violates domain membership beyond tolerance."""


class InvalidProbe(MonotoneSDIError):
    """Probe pair (alpha, beta) is not in the operator graph."""


class IncompatibleMetric(MonotoneSDIError):
    """Metric kind is incompatible with the scenario operator."""


class MissingAuxiliary(MonotoneSDIError):
    """Required auxiliary process (W) was not recorded."""


class ScheduleOff(MonotoneSDIError):
    """Check requires an active Tikhonov schedule."""


class DegenerateWindow(MonotoneSDIError):
    """Rate-fit window contains fewer than 5 usable points."""


class GridMismatch(MonotoneSDIError):
    """Series being reduced do not share a time grid."""


class IoFailure(MonotoneSDIError):
    """Report files could not be written or read."""


class MissingManifest(MonotoneSDIError):
    """Report directory has no manifest file."""


class ParseError(MonotoneSDIError):
    """Scenario text could not be parsed."""

    def __init__(self, message, line=None, col=None):
        super().__init__(message)
        self.line = line
        self.col = col


class ValidationError(MonotoneSDIError):
    """Scenario field violates a rule."""

    def __init__(self, field, rule):
        super().__init__(f"{field}: {rule}")
        self.field = field
        self.rule = rule
