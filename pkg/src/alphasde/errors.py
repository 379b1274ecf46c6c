"""Exception hierarchy shared by all modules."""


class AlphaSdeError(Exception):
    """Base class for all package errors."""


class DomainError(AlphaSdeError):
    """A point lies outside the system domain (or too close to its edge
    for the requested finite-difference stencil)."""


class EvaluationError(AlphaSdeError):
    """A coefficient field produced a non-finite or mis-shaped value."""


class ConfigError(AlphaSdeError):
    """Invalid experiment configuration or operation parameters."""


class DivergenceError(AlphaSdeError):
    """A sample path blew up; carries the offending path and step."""

    def __init__(self, message, path_index=None, step_index=None):
        super().__init__(message)
        self.path_index = path_index
        self.step_index = step_index


class StepSizeError(AlphaSdeError):
    """Requested time step violates the stability bound; carries a
    suggested stable step."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class GridResolutionError(AlphaSdeError):
    """Grid too coarse to resolve coefficients or to carry a density
    across a coordinate change."""


class TransformError(AlphaSdeError):
    """Coordinate transform failed validation (round-trip or Jacobian)."""


class StationarySolveError(AlphaSdeError):
    """Stationary linear solve failed; carries rank diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MassConservationError(AlphaSdeError):
    """A closed-boundary density step failed to conserve mass."""


class PositivityError(AlphaSdeError):
    """A density step produced negative values (the scheme must preserve
    nonnegativity or fail loudly, never clip)."""
