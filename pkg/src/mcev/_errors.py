"""Exception hierarchy shared across the package.

All errors raised by this package derive from :class:`McevError`, so callers
can catch one base type at API boundaries (the CLI maps them to exit codes).
"""

from __future__ import annotations

__all__ = [
    "McevError",
    "McevDomainError",
    "DegenerateParameterError",
    "SingularTimeError",
    "ConvergenceError",
    "RangeOverflowError",
]


class McevError(Exception):
    """Base class for all package-specific errors."""


class McevDomainError(McevError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateParameterError(McevDomainError):
    """Parameters hit a pole or degeneracy of the underlying special function
    (e.g. a Kummer denominator parameter that is zero or a negative integer)."""


class SingularTimeError(McevDomainError):
    """The closed-form time factors are singular at the requested horizon
    (the denominator cosh(tau) + Q*sinh(tau) vanishes)."""


class ConvergenceError(McevError, RuntimeError):
    """An iterative evaluation failed to reach the requested tolerance.

    Parameters
    ----------
    message : str
        Human-readable diagnostic.
    terms_used : int, optional
        Number of series terms / continued-fraction levels consumed before
        giving up.
    est_error : float, optional
        Best available estimate of the relative error at the point of failure.
    """

    def __init__(self, message: str, *, terms_used: int | None = None,
                 est_error: float | None = None) -> None:
        super().__init__(message)
        self.terms_used = terms_used
        self.est_error = est_error

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        base = super().__str__()
        extras = []
        if self.terms_used is not None:
            extras.append(f"terms_used={self.terms_used}")
        if self.est_error is not None:
            extras.append(f"est_error={self.est_error:.3g}")
        return f"{base} ({', '.join(extras)})" if extras else base


class RangeOverflowError(McevError, OverflowError):
    """The result exceeds binary64 range; a scaled/log variant should be used."""
