"""Exception hierarchy shared by all sturmflow modules."""

from typing import Any, Optional, Sequence


class SturmflowError(Exception):
    """Base class for every error raised by sturmflow."""


class InputError(SturmflowError, ValueError):
    """Rejected input: non-finite fields, malformed specs or scenario files."""


class DegenerateFieldError(InputError):
    """A field is too close to zero to carry a meaningful sign structure."""


class NumericalAbort(SturmflowError, RuntimeError):
    """A computation was abandoned; the CLI maps these to exit code 3."""


class BlowupError(NumericalAbort):
    """The sup-norm of a solution exceeded the configured bound."""

    def __init__(self, time: float, norm: float, bound: float):
        self.time = time
        self.norm = norm
        self.bound = bound
        super().__init__(
            f"blowup at t={time:.6g}: sup-norm {norm:.3e} exceeds {bound:.3e}"
        )


class ConvergenceError(NumericalAbort):
    """An iteration did not converge (or its phase condition degenerated)."""

    def __init__(self, message: str, residual: Optional[float] = None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (last residual {residual:.3e})"
        super().__init__(message)


class SingularJacobianError(NumericalAbort):
    """Newton met a numerically singular Jacobian."""


class NoCaptureError(SturmflowError):
    """No critical element captured the tail of a trajectory."""


class EscapeError(SturmflowError):
    """A shot left the configured bounding ball without being captured."""


class WindowTooShortError(SturmflowError):
    """Not enough samples (or steps) for the requested analysis."""


class NoEigenvalueMatchError(SturmflowError):
    """A fitted asymptotic rate matches no trusted eigenvalue."""

    def __init__(self, message: str, fit: Any = None):
        self.fit = fit
        super().__init__(message)


class NoGapError(SturmflowError):
    """The family has spectrum on (or too near) the reference circle."""


class IndeterminateError(SturmflowError):
    """A singular value fell inside the ambiguity band."""

    def __init__(self, message: str, singular_values: Sequence[float] = ()):
        self.singular_values = list(singular_values)
        super().__init__(message)


class PreconditionError(SturmflowError):
    """An operation was called without its precondition holding."""


class BumpConstructionError(SturmflowError):
    """No bump width produced a certain Melnikov sign."""

    def __init__(self, message: str, collision: Any = None):
        self.collision = collision
        super().__init__(message)
