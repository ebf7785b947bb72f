"""Exception hierarchy. Every error carries a short machine-readable ``kind``."""


class VolflowError(Exception):
    kind = "error"

    def __init__(self, message="", **details):
        super().__init__(message or self.kind)
        self.details = details

    def __str__(self):
        msg = super().__str__()
        return msg if msg.startswith(self.kind) else f"{self.kind}: {msg}"


class InvalidParameter(VolflowError, ValueError):
    kind = "invalid-parameter"


class InvalidArgument(VolflowError, ValueError):
    kind = "invalid-argument"


class InvalidField(VolflowError, ValueError):
    kind = "invalid-field"


class InvalidDensity(VolflowError, ValueError):
    kind = "invalid-density"


class InvalidInput(VolflowError, ValueError):
    kind = "invalid-input"


class InvalidEndpoints(VolflowError, ValueError):
    kind = "invalid-endpoints"


class UnsupportedOrder(VolflowError, ValueError):
    kind = "unsupported-order"


class IntegrationEscape(VolflowError, RuntimeError):
    """Orbit left a non-periodic chart. ``orbit`` holds the partial trajectory."""

    kind = "integration-escape"

    def __init__(self, message="", orbit=None, **details):
        super().__init__(message, **details)
        self.orbit = orbit


class TangencyError(VolflowError, RuntimeError):
    kind = "tangency-error"


class NotAFixedPoint(VolflowError, ValueError):
    kind = "not-a-fixed-point"


class HyperbolicityRequired(VolflowError, ValueError):
    kind = "hyperbolicity-required"


class EscapeBeforeReturn(VolflowError, RuntimeError):
    kind = "escape-before-return"


class DensityFailure(VolflowError, RuntimeError):
    """No recurrent point close enough to a path point; ``gap`` is that point."""

    kind = "density-failure"

    def __init__(self, message="", gap=None, **details):
        super().__init__(message, **details)
        self.gap = gap


class RequiresVerifiedInput(VolflowError, ValueError):
    kind = "requires-verified-input"


class ChainVerificationError(VolflowError, RuntimeError):
    kind = "chain-verification-failed"


class NoCircle(VolflowError, ValueError):
    kind = "no-circle"


class AngleBudgetExceeded(VolflowError, ValueError):
    kind = "angle-budget-exceeded"


class PatchCollision(VolflowError, RuntimeError):
    kind = "patch-collision"


class OracleFailure(VolflowError, RuntimeError):
    kind = "oracle-failure"


class ReturnTimeNotReached(VolflowError, RuntimeError):
    """Iteration budget spent before the target return time; ``trail`` is kept."""

    kind = "return-time-not-reached"

    def __init__(self, message="", trail=None, **details):
        super().__init__(message, **details)
        self.trail = trail if trail is not None else []


class InvalidRadii(VolflowError, ValueError):
    kind = "invalid-radii"
