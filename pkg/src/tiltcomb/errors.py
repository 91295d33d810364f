"""Exception classes raised across the package."""


class TiltCombError(Exception):
    """Base class for every error raised by tiltcomb."""


class EmptySupport(TiltCombError):
    pass


class NonContiguousMultiplicity(TiltCombError):
    pass


class InvalidColors(TiltCombError):
    pass


class Divergent(TiltCombError):
    """Tilt outside the region where the marginal weights are summable."""


class BracketFailure(TiltCombError):
    pass


class AllDegenerate(TiltCombError):
    pass


class SupportMismatch(TiltCombError):
    pass


class ResourceLimit(TiltCombError):
    pass


class ZeroCount(TiltCombError):
    pass


class UnsupportedTarget(TiltCombError):
    pass


class ZeroVariance(TiltCombError):
    pass


class RootNotBracketed(TiltCombError):
    pass


class QuadratureFailure(TiltCombError):
    pass


class DomainError(TiltCombError, ValueError):
    pass


class DegenerateComplement(TiltCombError):
    pass


class AttemptsExhausted(TiltCombError):
    pass


class InsufficientSamples(TiltCombError):
    pass


class PreconditionViolated(TiltCombError, ValueError):
    pass


class ParseError(TiltCombError, ValueError):
    def __init__(self, message, line=None, field=None):
        self.message = message
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class EmptyStabilizingSet(UserWarning):
    """|M| = 0: the stabilizing-set diagnostic failed (estimate still computed)."""
