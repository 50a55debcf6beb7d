"""Exception hierarchy for the simulator."""
from typing import Optional, Sequence


class SimulationError(Exception):
    """Base class for every error raised by the simulator."""


class QuadratureError(SimulationError):
    """An adaptive quadrature did not reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


class UnsupportedDimensionError(SimulationError, ValueError):
    """The requested operation is not available in this dimension."""

    def __init__(self, d: int, supported: Sequence[int]):
        super().__init__(f"Dimension d={d} not supported here (supported: {list(supported)})")
        self.d = d


class DomainError(SimulationError, ValueError):
    """An argument lies outside the region a table or solver covers."""


class ConfigError(SimulationError, ValueError):
    """Configuration is invalid; carries every violation found."""

    def __init__(self, violations: Sequence[tuple[str, str]]):
        self.violations = list(violations)
        lines = [f"  - {key}: {msg}" for key, msg in self.violations]
        super().__init__("Invalid configuration:\n" + "\n".join(lines))


class TableResolutionError(SimulationError):
    """Interpolation error of a kernel table exceeds the tolerance."""

    def __init__(self, measured_error: float, tol: float):
        super().__init__(
            f"Table resolution too coarse: measured relative error {measured_error:.3e} > tol {tol:.1e}"
        )
        self.measured_error = measured_error
        self.tol = tol


class SolverError(SimulationError):
    """Ground-state solver failed (nodes, non-convergence)."""

    def __init__(self, message: str, residual: Optional[float] = None):
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class SingularArgumentError(SimulationError, ValueError):
    """Argument hits a singular point of the formula (e.g. k = 0)."""


class FieldAssemblyError(SimulationError):
    """Covariance matrix of a field sample could not be factorised."""

    def __init__(self, message: str, eigenvalues):
        super().__init__(f"{message}; smallest eigenvalues: {list(eigenvalues)[:5]}")
        self.eigenvalues = eigenvalues


class InsufficientDataError(SimulationError, ValueError):
    """Not enough samples (or effective samples) for the requested statistic."""


class CheckpointMismatchError(SimulationError):
    """Checkpoint was written by a different configuration."""


class NonFiniteObservableError(SimulationError):
    """An observable returned NaN or Inf."""

    def __init__(self, name: str, step: int):
        super().__init__(f"Observable '{name}' is not finite at step {step}")
        self.name = name
        self.step = step


class MixedHashError(SimulationError):
    """Outputs from different configurations were combined."""
