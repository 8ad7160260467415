class McfemError(Exception):
    """Base class for package errors."""


class CapacityError(McfemError, ValueError):
    """Requested size exceeds an implementation cap."""


class GeometryError(McfemError):
    """Degenerate element or surface."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class SingularTimeError(McfemError, ValueError):
    """Time at or beyond the extinction time of the exact sphere."""


class ConvergenceError(McfemError):
    """Iterative linear solve did not reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class HypothesisError(McfemError, ValueError):
    """Input violates the smallness hypothesis of a probe."""
