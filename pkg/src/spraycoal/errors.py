"""Exception hierarchy.  The CLI maps these onto exit codes."""
from __future__ import annotations


class SprayError(Exception):
    """Base class for all package errors."""


class ConfigError(SprayError, ValueError):
    """Invalid configuration or physically inconsistent parameters."""


class DomainError(SprayError, ValueError):
    """Function evaluated outside its domain of definition."""


class SolverError(SprayError, RuntimeError):
    """A numerical solver could not complete."""


class RealizabilityError(SolverError):
    """Moment vector is not the moment sequence of a positive measure."""


class SingularSystemError(SolverError):
    """Moment-matching linear system is singular (coincident abscissas)."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None):
        super().__init__(message)
        self.pair = pair


class IllConditionedError(SolverError):
    """Iterative refinement failed to reach the residual target."""

    def __init__(self, message: str, condition: float = float("nan"), residual: float = float("nan")):
        super().__init__(message)
        self.condition = condition
        self.residual = residual


class FlowReversalError(SolverError):
    """A transported velocity became non-positive."""


class StiffnessError(SolverError):
    """Step size underflow in the stiff integrator."""

    def __init__(self, message: str, z: float = float("nan"), state=None):
        super().__init__(message)
        self.z = z
        self.state = state
