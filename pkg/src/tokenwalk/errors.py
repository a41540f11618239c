"""Exception hierarchy shared by all modules.

The CLI maps these to process exit codes: config/validation problems exit 2,
accountant failures exit 3, dataset problems exit 4 and infeasible calibration
targets exit 5.
"""

from __future__ import annotations

__all__ = [
    "TokenwalkError",
    "GraphError",
    "TransitionError",
    "SpectralError",
    "AccountantError",
    "CalibrationError",
    "DataError",
    "ConfigError",
]


class TokenwalkError(Exception):
    """Base class for all errors raised by this package."""


class GraphError(TokenwalkError):
    """Invalid graph input or generation failure (e.g. connectivity retries
    exhausted, malformed edge list)."""


class TransitionError(TokenwalkError):
    """Transition-matrix construction or validation problem."""


class SpectralError(TokenwalkError):
    """Eigendecomposition preconditions violated (asymmetric input, degenerate
    spectral gap, solver failure)."""


class AccountantError(TokenwalkError):
    """Privacy-accounting precondition violated (noise below the weak-convexity
    gate, self-pair request, parameter out of range)."""


class CalibrationError(AccountantError):
    """Noise calibration target is not achievable; carries the feasible range."""

    def __init__(
        self,
        message: str,
        *,
        min_feasible: float | None = None,
        max_feasible: float | None = None,
    ) -> None:
        super().__init__(message)
        self.min_feasible = min_feasible
        self.max_feasible = max_feasible


class DataError(TokenwalkError):
    """Dataset loading or preprocessing problem."""


class ConfigError(TokenwalkError):
    """Invalid experiment configuration (unknown keys, bad schema, bad flag)."""
