"""Exception types raised across the package."""


class ConsromError(Exception):
    """Base class for all package errors."""


class MeshFormatError(ConsromError, ValueError):
    """Malformed mesh file; ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class MeshValidationError(ConsromError, ValueError):
    """A mesh invariant failed; ``invariant`` names it."""

    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        super().__init__(f"mesh invariant '{invariant}' violated" + (f": {detail}" if detail else ""))


class FactorizationError(ConsromError, ArithmeticError):
    """Sparse factorization failed (singular to working precision)."""


class StructuralError(ConsromError):
    """A sparse/graph structure is not what an algorithm requires."""


class NumericalError(ConsromError, ArithmeticError):
    """An iterative numerical method did not converge."""


class ConvergenceError(NumericalError):
    """Nonlinear iteration hit its cap; ``residual`` is the last nonlinear residual."""

    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class SolverError(ConsromError):
    """A full-order solve failed for parameter ``mu``."""

    def __init__(self, mu, cause):
        self.mu = mu
        self.cause = cause
        super().__init__(f"solve failed for mu={list(map(float, mu))}: {cause}")


class TrainingError(ConsromError, ArithmeticError):
    """Loss became non-finite during training."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")


class DomainError(ConsromError, ValueError):
    """Parameter vector outside the problem's parameter box."""


class ArtifactMismatchError(ConsromError):
    """An on-disk artifact was produced from a different mesh/config."""


class ConfigError(ConsromError, ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
