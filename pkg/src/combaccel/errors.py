"""Exception hierarchy.

Two families matter to callers: bad inputs (``ValidationError``) and
numerical procedures that could not produce an answer (``SolverError``).
The CLI maps them to exit codes 2 and 3.
"""

from __future__ import annotations


class CombAccelError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ValidationError(CombAccelError, ValueError):
    """An input violates a documented precondition."""

    exit_code = 2


class SolverError(CombAccelError, RuntimeError):
    """A solver, fit or search failed to produce a valid result."""

    exit_code = 3


class DispersionError(SolverError):
    """Index samples cannot be turned into a physical dispersion model."""


class PlanError(SolverError):
    """No consistent wavelength plan or ring geometry exists."""


class CalibrationError(SolverError):
    """The achievable E/O levels cannot be mapped onto a linear ramp."""


class TrimError(SolverError):
    """The resonance trimming loop failed to converge."""
