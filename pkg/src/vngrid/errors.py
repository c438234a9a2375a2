"""Exception types shared across the engine."""


class VngridError(Exception):
    """Base class for engine errors."""


class IllConditionedBasisError(VngridError):
    """Overlap matrix condition number exceeds the safe limit.

    Raised when a lattice/width combination produces a (near-)singular
    Gaussian overlap matrix, e.g. a critically sampled lattice whose
    dimensions are both even.
    """

    def __init__(self, message, cond=None, size=None):
        super().__init__(message)
        self.cond = cond
        self.size = size


class DegenerateUpdateError(VngridError):
    """Schur complement of a block-inverse update is not positive definite."""


class ConvergenceError(VngridError):
    """Iterative eigenmode search did not converge.

    Carries the per-iteration ``history`` of (basis size, boundary amplitude)
    so the failure can be diagnosed.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class TimestepUnderflowError(VngridError):
    """Adaptive propagation halved the step below the hard floor."""

    def __init__(self, message, events=None):
        super().__init__(message)
        self.events = events or []


class ConfigError(VngridError):
    """Run configuration violates the published schema."""
