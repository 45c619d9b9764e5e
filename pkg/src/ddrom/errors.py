"""Exception types raised by ddrom."""


class DdromError(Exception):
    """Base class for library errors."""


class MeshError(DdromError, ValueError):
    """Invalid geometry, cell counts or boundary tagging."""


class SingularSystemError(DdromError, ArithmeticError):
    """A subdomain or global linear system could not be factorized."""


class NonConvergedError(DdromError):
    """A Dirichlet-Neumann loop hit ``max_iters`` where convergence is required."""

    def __init__(self, message, mu=None, iters=None, gap=None):
        super().__init__(message)
        self.mu = mu
        self.iters = iters
        self.gap = gap


class StageError(DdromError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.detail = message


class TrainingError(StageError):
    """Offline training failed."""


class EmptyTrainingError(TrainingError):
    def __init__(self, message="snapshot set is empty"):
        super().__init__("EMPTY_TRAINING", message)
