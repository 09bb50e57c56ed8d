"""Exception types shared across the package."""


class FlowmapError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(FlowmapError):
    """Operands have incompatible shapes or extents."""


class NotPositiveDefinite(FlowmapError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, pivot_index: int):
        self.pivot_index = pivot_index
        super().__init__(f"matrix is not positive definite (pivot {pivot_index} <= 0)")


class ConfigError(FlowmapError):
    """Invalid or unknown configuration."""


class DomainError(FlowmapError):
    """Argument outside the mathematically valid domain."""


class TrainingDiverged(FlowmapError):
    """Flow-matching training produced a non-finite loss."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"training loss became non-finite at step {step}")


class DivergedTrajectory(FlowmapError):
    """An ODE rollout produced a non-finite state."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"trajectory state became non-finite at step {step}")


class DivergedSolve(FlowmapError):
    """A reconstruction solve produced a non-finite iterate."""

    def __init__(self, step: int, inner_iter: int = -1):
        self.step = step
        self.inner_iter = inner_iter
        where = f"step {step}" if inner_iter < 0 else f"step {step}, inner iteration {inner_iter}"
        super().__init__(f"solver iterate became non-finite at {where}")
