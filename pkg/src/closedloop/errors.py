"""Exception hierarchy shared by every module of the toolkit."""


class ToolkitError(Exception):
    """Base class; the CLI maps any subclass to a solver-failure exit code."""


class DegenerateGridError(ToolkitError):
    pass


class DomainError(ToolkitError):
    pass


class ShapeError(ToolkitError):
    pass


class PropagationError(ToolkitError):
    """Non-finite values appeared while integrating; ``time`` is where it happened."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class UnsupportedSystemError(ToolkitError):
    pass


class SingularSystemError(ToolkitError):
    pass


class EvaluationError(ToolkitError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class NoConvergenceError(ToolkitError):
    """Iteration failed; ``best`` holds the best iterate, ``residual`` its residual."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class NodeError(ToolkitError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InconsistentTrajectoryError(ToolkitError):
    pass


class ConfigurationError(ToolkitError):
    pass


class SeedError(ToolkitError):
    pass


class SingularityError(ToolkitError):
    pass


class ReconstructionError(ToolkitError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class DegenerateStateError(ToolkitError):
    pass


class GridResolutionError(ToolkitError):
    pass


class TowerTruncationError(ToolkitError):
    def __init__(self, message, depth=0):
        super().__init__(message)
        self.depth = depth


class PreconditionError(ToolkitError):
    pass
