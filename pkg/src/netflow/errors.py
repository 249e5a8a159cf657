"""Exception types shared across the package."""

from __future__ import annotations


class NetflowError(Exception):
    """Base class for all package errors."""


class InvalidCurveError(NetflowError, ValueError):
    """A curve has a degenerate sample or tangent."""


class InvalidNetworkError(NetflowError, ValueError):
    """Network incidence or geometry is inconsistent."""


class UnsupportedValenceError(NetflowError, ValueError):
    """Resolution requested for a vertex of valence below three."""


class PreconditionError(NetflowError, ValueError):
    """Inputs violate a documented precondition."""


class DomainError(NetflowError, ValueError):
    """Evaluation outside the domain of a map or kernel."""


class SolverFailure(NetflowError, RuntimeError):
    """An iterative solver did not converge.

    Parameters
    ----------
    message : str
        Human readable description.
    residual : float
        Last residual norm reached before giving up.
    """

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class TopologyDegenerateError(SolverFailure):
    """An internal edge collapsed while solving for a soliton."""

    def __init__(self, message: str, edge: object, residual: float = float("nan")):
        super().__init__(message, residual)
        self.edge = edge


class FitFailure(NetflowError, RuntimeError):
    """An asymptotic fit could not be carried out."""


class StepFailure(SolverFailure):
    """A flow step failed at a specific junction."""

    def __init__(self, message: str, vertex: int, residual: float = float("nan")):
        super().__init__(message, residual)
        self.vertex = vertex


class DegenerateParametrizationError(NetflowError, RuntimeError):
    """Parametrization speed dropped below the allowed floor."""


class InversionFailure(SolverFailure):
    """Newton inversion of the junction chart diverged."""


class StartupError(NetflowError, RuntimeError):
    """Soliton insertion could not be blended into the network."""


class UnsupportedSingularityError(NetflowError, RuntimeError):
    """An edge is vanishing while curvature blows up; the flow cannot be continued.

    ``diagnostics`` holds the time, edge lengths and curvature at detection.
    """

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics
