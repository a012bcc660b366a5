"""Model parameters, derived closed-form constants, and coordinate transforms.

The asset follows the modified-CEV diffusion

    dS/S = [alpha + c a^2 S^(2 beta)] ds + a S^beta dW,

the investor has power utility U(x) = x^gamma / gamma (gamma < 1, != 0), and
cash earns the constant rate r.  The closed-form machinery works in the
transformed coordinates

    z = Lambda * S^(-2 beta),        tau = a^2 beta^2 Lambda * (T - t),

with the constant set (delta, Lambda, lambda, eta, Q, R, theta, omega)
computed by :func:`derive_constants`.  The time-dependent factors A, B, D of
the closed-form value multiplier come from :func:`time_functions`.

Derivation notes (kept here because two scalings are easy to get wrong):

* In z-coordinates the value-multiplier PDE reads
  ``-f_tau + 2 z f_zz + [k0 + k1 z] f_z + [V1 z + V0 + Vm1 / z] f = 0`` with
  ``Vm1 = delta (delta - 1) c^2 / (2 beta^2)`` — the volatility scale ``a``
  cancels out of the 1/z coefficient because the squared market price of
  risk contributes ``(c a^2 S^beta / a)^2 = c^2 a^2 S^(2 beta)`` and the
  change of variables divides by ``a^2``.  The indicial equation at z = 0
  then gives ``eta^2 = (lambda + 1/2)^2 + delta (1 - delta) c^2 / (4 beta^2)``;
  scalings with extra powers of ``a`` in that radicand fail the PDE-residual
  and quadrature consistency tests in ``tests/test_policy.py``.
* Completing the square in the z-linear coefficient gives
  ``Q = delta (alpha - gamma r) / (Lambda beta a^2)`` and the exact identity
  ``Q^2 - 2 V1 = 1``; the constant term yields
  ``R = -2 Q lambda + [r gamma delta - delta (1 - delta) (alpha - r) c] /
  (a^2 beta^2 Lambda)`` (the interest-rate term enters through
  ``r gamma delta``, matching the ``r gamma delta f`` term of the PDE).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from ._errors import McevDomainError, SingularTimeError

__all__ = [
    "MCEVParams",
    "UtilityParams",
    "DerivedConstants",
    "TimeFunctions",
    "derive_constants",
    "to_z",
    "to_tau",
    "time_functions",
]


@dataclass(frozen=True)
class MCEVParams:
    """Raw diffusion parameters of the modified-CEV asset.

    Attributes
    ----------
    a : float
        Volatility scale, ``a > 0``.
    beta : float
        Elasticity exponent, ``beta != 0``.
    c : float
        Default-intensity multiplier in the drift, ``c >= 0``.
    alpha : float
        Linear drift component (risk-free rate minus payout plus spread).
    r : float
        Risk-free rate, ``r >= 0``.
    """

    a: float
    beta: float
    c: float
    alpha: float
    r: float

    def __post_init__(self) -> None:
        for name in ("a", "beta", "c", "alpha", "r"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise McevDomainError(f"{name} must be a finite number, got {v!r}")
        if self.a <= 0.0:
            raise McevDomainError(f"a must be > 0, got {self.a}")
        if self.beta == 0.0:
            raise McevDomainError("beta must be nonzero")
        if self.c < 0.0:
            raise McevDomainError(f"c must be >= 0, got {self.c}")
        if self.r < 0.0:
            raise McevDomainError(f"r must be >= 0, got {self.r}")

    @classmethod
    def from_config(cls, cfg: Mapping[str, object]) -> "MCEVParams":
        """Build from a flat JSON-style mapping with keys a, beta, c, alpha, r."""
        try:
            return cls(a=float(cfg["a"]), beta=float(cfg["beta"]),
                       c=float(cfg["c"]), alpha=float(cfg["alpha"]),
                       r=float(cfg["r"]))
        except KeyError as exc:
            raise McevDomainError(f"missing model parameter {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class UtilityParams:
    """Power-utility exponent and its derived inverse-relative-risk-aversion.

    Attributes
    ----------
    gamma : float
        Utility exponent, ``gamma < 1`` and ``gamma != 0``.
    delta : float
        Derived, ``delta = 1/(1 - gamma)``; never passed by the caller.
    """

    gamma: float
    delta: float = 0.0  # filled in __post_init__

    def __post_init__(self) -> None:
        g = self.gamma
        if not isinstance(g, (int, float)) or not math.isfinite(g):
            raise McevDomainError(f"gamma must be a finite number, got {g!r}")
        if g >= 1.0 or g == 0.0:
            raise McevDomainError(f"gamma must satisfy gamma < 1, gamma != 0, got {g}")
        object.__setattr__(self, "delta", 1.0 / (1.0 - g))

    @classmethod
    def from_config(cls, cfg: Mapping[str, object]) -> "UtilityParams":
        try:
            return cls(gamma=float(cfg["gamma"]))
        except KeyError as exc:
            raise McevDomainError("missing utility parameter 'gamma'") from exc


@dataclass(frozen=True)
class DerivedConstants:
    """Closed-form constant set in the transformed coordinates.

    ``lam`` is the lambda exponent (named to avoid the Python keyword);
    ``theta = 1/2 + eta - lam`` and ``omega = 1 + 2 eta`` are the Kummer
    parameters fed to the ratio kernel.
    """

    delta: float
    Lambda: float
    lam: float
    eta: float
    Q: float
    R: float
    theta: float
    omega: float


@dataclass(frozen=True)
class TimeFunctions:
    """Values of the time factors A, B, D at a given tau.

    Satisfy ``2 A sinh^2(tau) (coth(tau) + Q) = 1`` and
    ``D = sinh^2(tau) (coth(tau) + Q)^2``.
    """

    A: float
    B: float
    D: float


def derive_constants(m: MCEVParams, u: UtilityParams) -> DerivedConstants:
    """Compute the full closed-form constant set from raw parameters.

    Parameters
    ----------
    m : MCEVParams
    u : UtilityParams

    Returns
    -------
    DerivedConstants

    Raises
    ------
    McevDomainError
        If ``alpha^2 <= gamma r^2`` (Lambda undefined) or the eta radicand is
        negative (possible only for gamma in (0, 1)).
    """
    a, beta, c, alpha, r = m.a, m.beta, m.c, m.alpha, m.r
    gamma, delta = u.gamma, u.delta
    disc = alpha * alpha - gamma * r * r
    if disc <= 0.0:
        raise McevDomainError(
            f"Lambda undefined: alpha^2 - gamma r^2 = {disc} must be > 0"
        )
    Lambda = math.sqrt(delta) * math.sqrt(disc) / (a * a * abs(beta))
    lam = -0.5 - (0.5 - delta * c) / (2.0 * beta)
    radicand = (lam + 0.5) ** 2 + delta * (1.0 - delta) * c * c / (4.0 * beta * beta)
    if radicand < 0.0:
        raise McevDomainError(
            f"eta radicand is negative ({radicand}); the closed form does not "
            "apply at these parameters"
        )
    eta = math.sqrt(radicand)
    a2b = Lambda * beta * a * a
    Q = delta * (alpha - gamma * r) / a2b
    a2b2L = a * a * beta * beta * Lambda
    R = (-2.0 * Q * lam
         + (r * gamma * delta - delta * (1.0 - delta) * (alpha - r) * c) / a2b2L)
    theta = 0.5 + eta - lam
    omega = 1.0 + 2.0 * eta
    return DerivedConstants(delta=delta, Lambda=Lambda, lam=lam, eta=eta,
                            Q=Q, R=R, theta=theta, omega=omega)


def to_z(S: float, d: DerivedConstants, beta: float) -> float:
    """Scaled space variable ``z = Lambda * S^(-2 beta)`` for ``S > 0``."""
    if not (isinstance(S, (int, float)) and math.isfinite(S)) or S <= 0.0:
        raise McevDomainError(f"S must be finite and > 0, got {S!r}")
    return d.Lambda * float(S) ** (-2.0 * beta)


def to_tau(t: float, T: float, m: MCEVParams, d: DerivedConstants) -> float:
    """Inverse time variable ``tau = a^2 beta^2 Lambda (T - t)`` for t <= T."""
    if t > T:
        raise McevDomainError(f"t={t} must not exceed the horizon T={T}")
    return m.a * m.a * m.beta * m.beta * d.Lambda * (T - t)


def time_functions(tau: float, Q: float) -> TimeFunctions:
    """Time factors A, B, D at ``tau > 0``.

    Uses the cancellation-safe denominator ``cosh(tau) + Q sinh(tau)``
    throughout (no coth), so small tau is handled without overflow:
    ``A = 1/(2 sinh(tau) [cosh(tau) + Q sinh(tau)]) ~ 1/(2 tau)`` as
    ``tau -> 0+``.

    Raises
    ------
    SingularTimeError
        If ``cosh(tau) + Q sinh(tau) <= 0`` (reachable only for Q < -1, where
        the closed form explodes at a finite horizon).
    McevDomainError
        If ``tau <= 0``.
    """
    if not math.isfinite(tau) or tau <= 0.0:
        raise McevDomainError(f"tau must be finite and > 0, got {tau}")
    ch = math.cosh(tau)
    sh = math.sinh(tau)
    denom = ch + Q * sh
    if denom <= 0.0:
        raise SingularTimeError(
            f"cosh(tau) + Q sinh(tau) = {denom} at tau={tau}, Q={Q}: the "
            "closed-form value is singular at or before this horizon"
        )
    A = 1.0 / (2.0 * sh * denom)
    B = (Q * Q - 1.0) * sh / (2.0 * denom)
    D = denom * denom
    return TimeFunctions(A=A, B=B, D=D)
