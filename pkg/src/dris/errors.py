"""Exception types shared across the package."""

from __future__ import annotations


class DrisError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateSetError(DrisError):
    """Raised when a target set is empty, contains the origin, or is otherwise unusable."""


class ProjectionError(DrisError):
    """Raised when an iterative projection fails to converge.

    Carries the worst residual seen so the caller can report it.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class BracketingError(DrisError):
    """Raised when the root-finder cannot establish a valid bracket.

    ``diagnostics`` holds the empirical h values at the attempted endpoints plus
    whether the failure came from an all-zero indicator (no sample hit the
    inflated set), so callers can report the two cases distinctly.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ConfigError(DrisError):
    """Raised for invalid experiment configuration input."""
