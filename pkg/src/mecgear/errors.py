"""Exception hierarchy shared across the package."""
from __future__ import annotations


class MecError(Exception):
    """Base class for all package errors."""


class InputError(MecError, ValueError):
    """Invalid user input: design files, sweep specs, CLI arguments."""


class GeometryError(InputError):
    """Non-physical or inconsistent gear geometry."""


class MeshError(InputError):
    """Discretization settings that cannot produce a valid mesh."""


class PeriodicityError(MecError):
    """Symmetry reduction requested on a non-periodic source pattern."""


class SingularSystemError(MecError):
    """Direct factorization of the reluctance system failed."""


class ConvergenceError(MecError):
    """Newton iteration exhausted its budget; carries the solve trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
