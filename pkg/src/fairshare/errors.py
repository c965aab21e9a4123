"""Exception hierarchy shared by all fairshare modules."""


class FairshareError(Exception):
    """Base class for all errors raised by this package."""


class NetworkError(FairshareError):
    """Invalid topology, weights or traffic configuration."""


class DistributionError(FairshareError):
    """Invalid class-D phase-type distribution."""


class QuadratureError(FairshareError):
    """Inner-product matrix could not be built to the requested accuracy."""


class SolverError(FairshareError):
    """An iterative solver did not converge.

    The best iterate and its residuals are attached so callers can inspect
    how far off the result is.
    """

    def __init__(self, message, iterate=None, residuals=None):
        super().__init__(message)
        self.iterate = iterate
        self.residuals = residuals


class SimulationError(FairshareError):
    """Simulation aborted; ``state`` holds the offending flow-count vector."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class StateSpaceError(FairshareError):
    """Truncated state space is too large or its generator is singular."""


class ConfigError(FairshareError):
    """Configuration document error, positioned by key path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
