"""Exception hierarchy shared across the package.

Every error raised by library code derives from FactorLensError so callers
(CLI, service) can map failures to exit codes / HTTP statuses in one place.
"""

from __future__ import annotations


class FactorLensError(Exception):
    """Base class for all package errors."""


class DimensionError(FactorLensError, ValueError):
    """Vector / configuration lengths disagree with the factor count."""


class ValidationError(FactorLensError, ValueError):
    """A domain type invariant is violated."""


class ConfigurationError(FactorLensError, ValueError):
    """A configuration object (bounds, EM settings, backend spec) is invalid."""


class BackendError(FactorLensError):
    """Oracle transport failure after exhausting the retry budget."""


class ProtocolError(BackendError):
    """Oracle answered, but the response could not be parsed.

    Carries the raw response text for debugging.
    """

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class CacheMissError(BackendError):
    """Replay backend has no recorded response for this prompt."""


class ElicitationError(FactorLensError):
    """Factor identification could not produce a usable factor set."""


class NumericalError(FactorLensError):
    """Non-finite value encountered during optimization."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class SolverNonConvergenceError(FactorLensError):
    """Constrained edit solver failed to reach the required residual.

    best_residual holds the smallest constraint violation reached, so the
    caller can report how far the solve got instead of silently accepting
    an approximate edit.
    """

    def __init__(self, message: str, best_residual: float):
        super().__init__(message)
        self.best_residual = best_residual


class InfeasibleEditError(FactorLensError):
    """The requested edit constraint is ill-posed (e.g. anchor AME is 0)."""


class LineageError(FactorLensError):
    """An edit record does not belong to the model it was applied against."""


class StorageError(FactorLensError):
    """Artifact store failure (missing entry, hash mismatch, bad payload)."""


class HashMismatchError(StorageError):
    """Stored payload does not match its recorded content hash."""


class UnknownVersionError(StorageError):
    """Artifact schema version is not recognized by this build."""
