"""Exception types raised across the package.

Every error carries a short machine-readable ``code`` so that the command
line front end can report which stage failed and why.
"""


class KGError(Exception):
    """Base class for all library errors."""

    code = "error"

    def __init__(self, message="", **details):
        super().__init__(message)
        self.details = details


class InvalidConfig(KGError):
    code = "invalid-config"


class InvalidData(KGError):
    code = "invalid-data"


class InsufficientSamples(KGError):
    code = "insufficient-samples"


class IllConditionedWeight(KGError):
    code = "ill-conditioned-weight"


class NotPositive(KGError):
    code = "not-positive"


class NotSelfAdjoint(KGError):
    code = "not-self-adjoint"


class SingularResolvent(KGError):
    code = "singular-resolvent"


class IntegrationFailure(KGError):
    code = "integration-failure"


class InvalidGeometry(KGError):
    code = "invalid-geometry"


class PositivityViolated(KGError):
    code = "positivity-violated"


class IterationDiverged(KGError):
    code = "iteration-diverged"


class GapRepairFailed(KGError):
    code = "gap-repair-failed"


class NoConvergence(KGError):
    code = "no-convergence"


class BadPacket(KGError):
    code = "bad-packet"
