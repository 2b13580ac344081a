"""Exception hierarchy shared by all modules and mapped to CLI exit codes."""


class CohscatError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(CohscatError, ValueError):
    """Invalid or incomplete experiment configuration."""

    exit_code = 2


class PhysicsError(CohscatError, RuntimeError):
    """A computation could not produce a physically meaningful result."""


class UnresolvedPeakError(PhysicsError):
    pass


class UnstableSystemError(PhysicsError):
    """The linearized operating point has a growing mode (no steady state)."""


class UnstableStepError(PhysicsError):
    pass


class InsufficientDataError(PhysicsError):
    pass


class NoConvergenceError(PhysicsError):
    pass


class MultiplePeaksError(PhysicsError):
    pass


class AmbiguousPhaseError(PhysicsError):
    pass
