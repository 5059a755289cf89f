"""Exception hierarchy shared by every ucnp_core module.

Each error double-inherits the builtin a caller would naturally catch, so
``except ValueError`` keeps working for bad inputs and ``except RuntimeError``
for solver failures.
"""
from __future__ import annotations

from typing import Any


class UcnpError(Exception):
    """Root of all errors raised by ucnp_core."""


class InvalidInputError(UcnpError, ValueError):
    """An argument is outside the domain of the operation."""


class NonConfiningError(InvalidInputError):
    """The charge distribution does not trap electrons anywhere."""


class ConfigError(UcnpError, ValueError):
    """A scenario or constants file is unreadable or fails validation."""


class ConvergenceError(UcnpError, RuntimeError):
    """An iterative solve stopped without meeting its tolerance.

    ``diagnostics`` carries whatever the solver knew when it gave up
    (residuals, last iterate, iteration count) for reporting.
    """

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.diagnostics: dict[str, Any] = dict(diagnostics or {})


class StepSizeError(ConvergenceError):
    """A time step was too large for the integrator to complete."""


class ContractViolationError(UcnpError, RuntimeError):
    """A precondition on solver state (not on user input) does not hold."""


class DivergenceError(UcnpError, ArithmeticError):
    """A rate formula is singular at the requested point."""


class InferenceError(UcnpError, RuntimeError):
    """Measured data does not support the requested inference."""


class FitError(UcnpError, RuntimeError):
    """A least-squares fit could not be performed on the given samples."""
