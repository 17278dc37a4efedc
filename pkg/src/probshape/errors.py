"""Exception hierarchy shared across the package."""


class ProbShapeError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(ProbShapeError, ValueError):
    """Array shapes are inconsistent with the operation's contract."""


class DomainError(ProbShapeError, ValueError):
    """An input value lies outside the operation's valid domain."""


class UsageError(ProbShapeError, ValueError):
    """The operation was invoked in a way its contract forbids."""


class DegeneracyError(ProbShapeError, ValueError):
    """Geometric input is degenerate (zero extent, collinear, rank-deficient)."""


class InsufficientEvidenceError(ProbShapeError):
    """Too few valid points survive filtering to support downstream stages."""


class RegistrationFailedError(ProbShapeError):
    """No similarity transform with enough inliers could be found."""


class DivergenceError(ProbShapeError):
    """A training loop or sampler produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
