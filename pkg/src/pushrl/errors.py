"""Exception types shared across the package."""


class PushrlError(Exception):
    pass


class NonFiniteState(PushrlError):
    """Simulator produced a non-finite state entry; the rollout must abort."""


class ResetFailed(PushrlError):
    """Could not draw a non-contacting initial configuration (bad geometry)."""


class DegenerateGradient(PushrlError):
    """g' F^-1 g below threshold; the caller should skip the update."""


class SingularSystem(PushrlError):
    """Regularized least-squares system is numerically singular."""


class IterationMismatch(PushrlError):
    """Worker reports disagree on the iteration index (protocol violation)."""


class ConnectionLost(PushrlError):
    """TCP peer went away mid-protocol."""


class WorkerTimeout(PushrlError):
    """A worker failed to report within the per-round timeout."""


class NonFiniteResidual(PushrlError):
    """System-ID residual evaluation returned non-finite entries."""


class ConfigError(PushrlError):
    """Run configuration file is missing, malformed, or inconsistent."""
