"""Exception types shared across the package."""

from __future__ import annotations


class DwellsafeError(Exception):
    """Base class for all package errors."""


class PropagationError(DwellsafeError):
    """Numerical integration failed (step underflow or non-finite derivative).

    Carries the last valid time/state pair reached before the failure.
    """

    def __init__(self, message: str, t_last: float, y_last):
        super().__init__(message)
        self.t_last = t_last
        self.y_last = y_last


class SingularityError(DwellsafeError):
    """A barrier quantity was evaluated at a state where it is undefined."""


class InfeasibleError(DwellsafeError):
    """The impulse optimization found no control meeting the hard constraints.

    Carries the best candidate found and its constraint residuals so the
    failure can be diagnosed offline.
    """

    def __init__(self, message: str, best_u=None, residuals=None):
        super().__init__(message)
        self.best_u = best_u
        self.residuals = residuals


class SimulationAborted(DwellsafeError):
    """Closed-loop simulation stopped early; the partial record is attached."""

    def __init__(self, message: str, record, cause: Exception | None = None):
        super().__init__(message)
        self.record = record
        self.cause = cause


class ConfigError(DwellsafeError):
    """Scenario or manifest configuration is invalid."""
