"""Exception types raised across the package."""


class WisdNavError(Exception):
    """Base class for all package errors."""


class InfeasibleTwist(WisdNavError, ValueError):
    """A body twist violates the constraints of the requested motion mode."""


class InferenceUndefined(WisdNavError):
    """Fuzzy inference produced zero membership for every output mode."""


class ShapeMismatch(WisdNavError, ValueError):
    pass


class InsufficientData(WisdNavError):
    pass


class InvalidScenario(WisdNavError, ValueError):
    pass


class InvalidConfig(WisdNavError, ValueError):
    pass


class SteppedTerminatedEpisode(WisdNavError, RuntimeError):
    pass


class NoPath(WisdNavError):
    pass


class MalformedLog(WisdNavError, ValueError):
    pass


class CorruptCheckpoint(WisdNavError):
    pass


class ArchitectureMismatch(WisdNavError):
    pass
