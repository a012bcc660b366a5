"""Closed-form Green function, value function, and optimal position.

The value multiplier f(S, t) solves a Cauchy problem that transforms, in the
coordinates ``z = Lambda S^(-2 beta)``, ``tau = a^2 beta^2 Lambda (T - t)``,
into a Whittaker-type equation.  Its Green kernel is

    F_G(z, tau; xi) = (1/2) exp{ R tau + Q (z - xi)/2 - (z + xi) coth(tau)/2 }
                      (z/xi)^(lambda + 1/2) * I_{2 eta}(sqrt(z xi)/sinh(tau))
                      / sinh(tau),

and integrating it in xi (Gradshteyn & Ryzhik, *Table of Integrals*, 6.643.2)
collapses the solution with unit terminal data to

    f(S, t) = e^{R tau + z B(tau)} D(tau)^lambda
              * Gamma(theta)/Gamma(omega)
              * e^{-w} w^(lambda + eta + 1/2) M(theta, omega, w),
    w = z A(tau),

with ``theta = 1/2 + eta - lambda`` and ``omega = 1 + 2 eta`` (the
``Gamma(eta - lambda + 1/2)`` prefactor is exactly ``Gamma(theta)``).  The
drift-vs-diffusion exponent in F_G must be ``Q (z - xi)/2``: with ``Q(z-xi)``
unhalved the 6.643.2 integral produces an argument other than ``z A(tau)``
and the quadrature duality test fails, so the halved form is implemented
(``tests/test_policy.py`` pins the duality to 1e-6).

The optimal position comes in two algebraically equal shapes; both are
exposed so they can cross-check each other numerically:

* Whittaker form: ``pi* = X ( delta (alpha - r + c a^2 S^(2 beta)) /
  (a^2 S^(2 beta + 1)) + [B + (lambda + eta + 1/2)/z * M_{lambda+1,eta}(w) /
  M_{lambda,eta}(w)] dz/dS )`` with ``dz/dS = -2 beta z / S``;
* ratio-kernel form: ``pi* = (X/S) [ (delta (alpha - r)/a^2 -
  2 beta Lambda B)/S^(2 beta) + delta c + 2 beta (theta - omega) *
  M(theta-1, omega, w)/M(theta, omega, w) ]``.

The mean-reversion (square-root process) specialization substitutes
``alpha = -kappa, c = kappa s_bar / a^2, beta = -1/2`` at zero interest,
collapsing the constants to ``lambda = -delta kappa s_bar / a^2``,
``Q = sqrt(delta)``, ``Lambda = 2 sqrt(delta) kappa / a^2`` and the position
to ``pi* = (X/S)[ delta kappa (s_bar - S)/a^2 + Lambda S B(tau) +
(lambda + eta + 1/2) * ratio(theta, omega, Lambda A(tau) S) ]``.  Note the
``Lambda`` factor on the ``S B(tau)`` term: it is required for the
specialization to agree with the general formula (the cross-check test pins
the agreement at 1e-9).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ._errors import (
    ConvergenceError,
    McevDomainError,
    RangeOverflowError,
)
from .model import (
    DerivedConstants,
    MCEVParams,
    UtilityParams,
    derive_constants,
    time_functions,
    to_tau,
    to_z,
)
from .specialfn import (
    RatioParams,
    kummer_m_log,
    log_gamma,
    ratio,
    ratio_large_x,
    _KUMMER_ASYM_CUTOFF,
    _kummer_asym_sigma,
    _ratio_direct_array,
    _ratio_large_x_array,
)

__all__ = [
    "PolicyInput",
    "CIRParams",
    "green_function",
    "value_multiplier",
    "value_function",
    "optimal_position",
    "optimal_position_whittaker",
    "position_fraction_array",
    "cir_constants",
    "cir_optimal_position",
    "TAU_FLOOR",
]

#: Evaluating the position exactly at the horizon would need A(0+), which
#: diverges; the tau -> 0 limit is taken at this floor instead.
TAU_FLOOR = 1e-8

_LOG_MAX = math.log(np.finfo(np.float64).max)


@dataclass(frozen=True)
class PolicyInput:
    """State at which the value/position is requested.

    Attributes
    ----------
    X : float
        Current wealth, ``X > 0``.
    S : float
        Current asset price, ``S > 0``.
    t : float
        Current time.
    T : float
        Horizon, ``T >= t``.
    """

    X: float
    S: float
    t: float
    T: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.X) and self.X > 0.0):
            raise McevDomainError(f"X must be finite and > 0, got {self.X}")
        if not (math.isfinite(self.S) and self.S > 0.0):
            raise McevDomainError(f"S must be finite and > 0, got {self.S}")
        if not (math.isfinite(self.t) and math.isfinite(self.T)) or self.t > self.T:
            raise McevDomainError(
                f"times must be finite with t <= T, got t={self.t}, T={self.T}"
            )


@dataclass(frozen=True)
class CIRParams:
    """Square-root (mean-reverting) diffusion parameters.

    ``dS = kappa (s_bar - S) dt + a sqrt(S) dW``.  ``feller`` records whether
    ``2 kappa s_bar > a^2`` (strictly positive paths); it is informational,
    not an error — the closed form remains valid either way.
    """

    kappa: float
    s_bar: float
    a: float
    feller: bool = field(init=False)

    def __post_init__(self) -> None:
        for name in ("kappa", "s_bar", "a"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0.0):
                raise McevDomainError(f"{name} must be finite and > 0, got {v!r}")
        object.__setattr__(self, "feller", 2.0 * self.kappa * self.s_bar > self.a**2)

    @classmethod
    def from_config(cls, cfg: Mapping[str, object]) -> "CIRParams":
        """Build from a flat JSON-style mapping with keys kappa, s_bar, a."""
        try:
            return cls(kappa=float(cfg["kappa"]), s_bar=float(cfg["s_bar"]),
                       a=float(cfg["a"]))
        except KeyError as exc:
            raise McevDomainError(f"missing CIR parameter {exc.args[0]!r}") from exc

    def to_mcev(self, r: float = 0.0) -> MCEVParams:
        """The equivalent modified-CEV parameterization."""
        return MCEVParams(a=self.a, beta=-0.5, c=self.kappa * self.s_bar / self.a**2,
                          alpha=-self.kappa, r=r)


# ---------------------------------------------------------------------------
# Green function
# ---------------------------------------------------------------------------


def _log_sinh(tau: float) -> float:
    """log(sinh(tau)) without overflow for large tau."""
    if tau > 20.0:
        return tau + math.log1p(-math.exp(-2.0 * tau)) - math.log(2.0)
    return math.log(math.sinh(tau))


def green_function(z: float, tau: float, xi: float, d: DerivedConstants) -> float:
    """Green kernel F_G(z, tau; xi) of the value-multiplier problem.

    Computed entirely in log-space (scaled Bessel ``e^{-x} I_nu(x)``), so
    large z, xi, or small tau do not overflow intermediate factors.

    Parameters
    ----------
    z, tau, xi : float
        All strictly positive.
    d : DerivedConstants

    Returns
    -------
    float
        Non-negative kernel value.

    Raises
    ------
    RangeOverflowError
        If even the log-space result exceeds binary64 range.
    """
    for name, v in (("z", z), ("tau", tau), ("xi", xi)):
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0.0):
            raise McevDomainError(f"{name} must be finite and > 0, got {v!r}")
    from scipy import special as _sp

    log_sh = _log_sinh(tau)
    coth = 1.0 / math.tanh(tau)
    arg = math.sqrt(z * xi) * math.exp(-log_sh)
    ive = float(_sp.ive(2.0 * d.eta, arg))
    if ive <= 0.0:
        # scaled Bessel underflow: the kernel is indistinguishable from zero
        return 0.0
    log_fg = (math.log(0.5) + d.R * tau + d.Q * (z - xi) / 2.0
              - (z + xi) * coth / 2.0
              + (d.lam + 0.5) * (math.log(z) - math.log(xi))
              - log_sh + math.log(ive) + arg)
    if not math.isfinite(log_fg):
        raise RangeOverflowError(
            f"Green kernel log-value is not finite at z={z}, tau={tau}, xi={xi}"
        )
    if log_fg > _LOG_MAX:
        raise RangeOverflowError(
            f"Green kernel overflows binary64 at z={z}, tau={tau}, xi={xi} "
            f"(log value {log_fg:.6g})"
        )
    return math.exp(log_fg)


# ---------------------------------------------------------------------------
# value multiplier / value function
# ---------------------------------------------------------------------------


def _log_value_multiplier(S: float, t: float, T: float, m: MCEVParams,
                          u: UtilityParams,
                          d: DerivedConstants | None = None) -> float:
    """log f(S, t) assembled from log-scaled factors."""
    if d is None:
        d = derive_constants(m, u)
    tau = to_tau(t, T, m, d)
    z = to_z(S, d, m.beta)
    tf = time_functions(tau, d.Q)
    w = z * tf.A
    if w <= 0.0 or not math.isfinite(w):
        raise RangeOverflowError(
            f"transformed argument w = z A(tau) = {w} is outside binary64 "
            f"resolution at S={S}, tau={tau}"
        )
    log_d_factor = 2.0 * (tau + math.log((1.0 + d.Q) / 2.0
                                         + (1.0 - d.Q) / 2.0 * math.exp(-2.0 * tau)))
    base = d.R * tau + z * tf.B + d.lam * log_d_factor
    if w > _KUMMER_ASYM_CUTOFF:
        # tau -> 0 sends w -> inf; inserting the large-w Kummer asymptotic
        # cancels the e^{-w} w^(lam+eta+1/2) Gamma-ratio prefactor exactly
        # (the exponents satisfy (lam+eta+1/2) + (theta-omega) = 0), leaving
        # only the asymptotic correction factor.  Doing the cancellation in
        # closed form keeps log f at machine accuracy where the generic
        # route would subtract two O(w) logs.
        sigma, _, _ = _kummer_asym_sigma(d.theta, d.omega, w)
        return base + math.log(sigma)
    sign, log_kummer = kummer_m_log(d.theta, d.omega, w)
    if sign <= 0.0:
        raise ConvergenceError(
            f"Kummer factor lost positivity at w={w} (theta={d.theta}, "
            f"omega={d.omega})"
        )
    return (base + log_gamma(d.theta) - log_gamma(d.omega)
            - w + (d.lam + d.eta + 0.5) * math.log(w) + log_kummer)


def value_multiplier(S: float, t: float, T: float, m: MCEVParams,
                     u: UtilityParams) -> float:
    """Value multiplier f(S, t) with terminal condition f(S, T) = 1.

    Parameters
    ----------
    S : float
        Asset price, ``S > 0``.
    t, T : float
        Current time and horizon, ``t <= T``.
    m, u : MCEVParams, UtilityParams

    Returns
    -------
    float
        ``f(S, t) > 0``; exactly 1 at ``t = T``.
    """
    if t == T:
        return 1.0
    log_f = _log_value_multiplier(S, t, T, m, u)
    if log_f > _LOG_MAX:
        raise RangeOverflowError(f"value multiplier overflows: log f = {log_f:.6g}")
    return math.exp(log_f)


def value_function(inp: PolicyInput, m: MCEVParams, u: UtilityParams) -> float:
    """Indirect utility J(X, S, t) = X^gamma/gamma * f(S, t)^(1/delta).

    Negative for gamma < 0, positive for gamma in (0, 1); homogeneous of
    degree gamma in wealth.
    """
    gamma = u.gamma
    base = inp.X**gamma / gamma
    if inp.t == inp.T:
        return base
    log_f = _log_value_multiplier(inp.S, inp.t, inp.T, m, u)
    return base * math.exp(log_f / u.delta)


# ---------------------------------------------------------------------------
# optimal position
# ---------------------------------------------------------------------------


def _policy_tau(inp: PolicyInput, m: MCEVParams, d: DerivedConstants) -> float:
    tau = to_tau(inp.t, inp.T, m, d)
    return max(tau, TAU_FLOOR)


def optimal_position(inp: PolicyInput, m: MCEVParams, u: UtilityParams) -> float:
    """Optimal asset position pi*(X, S, t) via the ratio-kernel form.

    ``pi* = (X/S)[ (delta (alpha - r)/a^2 - 2 beta Lambda B(tau))/S^(2 beta)
    + delta c + 2 beta (theta - omega) * r_K ]`` where ``r_K`` is the Kummer
    ratio at argument ``Lambda A(tau) S^(-2 beta)``.

    At ``t = T`` the tau -> 0 limit is evaluated at ``TAU_FLOOR``.

    Raises
    ------
    ConvergenceError
        If the ratio kernel fails; the error message carries the state.
    """
    d = derive_constants(m, u)
    tau = _policy_tau(inp, m, d)
    tf = time_functions(tau, d.Q)
    z = to_z(inp.S, d, m.beta)
    w = z * tf.A
    try:
        ev = ratio(RatioParams(d.theta, d.omega, w))
    except ConvergenceError as exc:
        raise ConvergenceError(
            f"ratio kernel failed inside optimal_position at S={inp.S}, "
            f"tau={tau}, w={w}: {exc}",
            terms_used=exc.terms_used,
            est_error=exc.est_error,
        ) from exc
    s2b = inp.S ** (2.0 * m.beta)
    bracket = ((u.delta * (m.alpha - m.r) / m.a**2 - 2.0 * m.beta * d.Lambda * tf.B)
               / s2b
               + u.delta * m.c
               + 2.0 * m.beta * (d.theta - d.omega) * ev.value)
    return inp.X / inp.S * bracket


def optimal_position_whittaker(inp: PolicyInput, m: MCEVParams,
                               u: UtilityParams) -> float:
    """Optimal position via the Whittaker-quotient form (cross-check path).

    ``pi* = X ( delta (alpha - r + c a^2 S^(2 beta)) / (a^2 S^(2 beta + 1))
    + [B(tau) + (lambda + eta + 1/2)/z * M_{lambda+1,eta}(w)/M_{lambda,eta}(w)]
    * dz/dS )`` with ``w = z A(tau)`` and ``dz/dS = -2 beta z / S``.

    Implemented with two log-scaled Whittaker (Kummer) evaluations rather
    than the ratio kernel, so it is an independent numerical route.
    """
    d = derive_constants(m, u)
    tau = _policy_tau(inp, m, d)
    tf = time_functions(tau, d.Q)
    z = to_z(inp.S, d, m.beta)
    w = z * tf.A
    # M_{lam+1, eta}(w) / M_{lam, eta}(w): the Whittaker prefactors cancel,
    # leaving the quotient of first-kind Kummer values at theta-1 and theta
    sign_n, log_n = kummer_m_log(d.theta - 1.0, d.omega, w)
    sign_d, log_d = kummer_m_log(d.theta, d.omega, w)
    whittaker_quotient = sign_n * sign_d * math.exp(log_n - log_d)
    dz_ds = -2.0 * m.beta * z / inp.S
    s2b = inp.S ** (2.0 * m.beta)
    myopic = u.delta * (m.alpha - m.r + m.c * m.a**2 * s2b) / (m.a**2 * s2b * inp.S)
    hedge = (tf.B + (d.lam + d.eta + 0.5) / z * whittaker_quotient) * dz_ds
    return inp.X * (myopic + hedge)


def position_fraction_array(S: np.ndarray, t: float, T: float, m: MCEVParams,
                            u: UtilityParams,
                            d: DerivedConstants | None = None,
                            tol: float = 1e-10) -> np.ndarray:
    """Vectorized ``pi*/X`` over an array of prices at one time.

    Used by the Monte Carlo engine, where the position is re-evaluated for
    ~1e5 paths per step: arguments deep enough in the asymptotic regime are
    evaluated with one Horner pass of the inverse-power expansion (term count
    certified by a scalar evaluation at the batch minimum — truncation error
    of a fixed-length tail decreases in the argument); moderate arguments are
    summed as a lockstep vectorized direct quotient with per-element
    certification, and any stragglers fall back to the scalar dispatcher.
    """
    if d is None:
        d = derive_constants(m, u)
    S = np.asarray(S, dtype=np.float64)
    if S.size == 0:
        return np.zeros_like(S)
    if not np.all(np.isfinite(S)) or np.any(S <= 0.0):
        raise McevDomainError("all prices must be finite and > 0")
    tau = max(to_tau(t, T, m, d), TAU_FLOOR)
    tf = time_functions(tau, d.Q)
    z = d.Lambda * S ** (-2.0 * m.beta)
    w = z * tf.A
    rat = np.empty_like(w)
    w_min = float(w.min())
    vector_ok = False
    try:
        gate = ratio_large_x(RatioParams(d.theta, d.omega, w_min), tol)
        vector_ok = True
    except ConvergenceError:
        pass
    if vector_ok:
        rat[:] = _ratio_large_x_array(d.theta, d.omega, w,
                                      n_terms=max(gate.terms_used - 1, 1))
    else:
        # certify vectorization from a higher cutoff; below it go scalar
        cutoff = max(2.0 * w_min, 80.0)
        big = w >= cutoff
        if np.any(big):
            gate = ratio_large_x(RatioParams(d.theta, d.omega,
                                             float(w[big].min())), tol)
            rat[big] = _ratio_large_x_array(d.theta, d.omega, w[big],
                                            n_terms=max(gate.terms_used - 1, 1))
        small = np.nonzero(~big)[0]
        if small.size:
            vals, ok = _ratio_direct_array(d.theta, d.omega, w[small], tol)
            rat[small[ok]] = vals[ok]
            for idx in small[~ok]:
                rat[idx] = ratio(RatioParams(d.theta, d.omega, float(w[idx])),
                                 tol=tol).value
    s2b = S ** (2.0 * m.beta)
    bracket = ((u.delta * (m.alpha - m.r) / m.a**2
                - 2.0 * m.beta * d.Lambda * tf.B) / s2b
               + u.delta * m.c
               + 2.0 * m.beta * (d.theta - d.omega) * rat)
    return bracket / S


# ---------------------------------------------------------------------------
# square-root (mean-reversion) specialization
# ---------------------------------------------------------------------------


def cir_constants(c: CIRParams, u: UtilityParams) -> DerivedConstants:
    """Derived constants for the square-root process at zero interest.

    Substitutes ``alpha = -kappa, c = kappa s_bar / a^2, beta = -1/2`` into
    the general machinery; the collapse ``lambda = -delta kappa s_bar / a^2``
    is exact and asserted.

    Collapsed forms (cross-checked by the test suite at 1e-13):
    ``Q = sqrt(delta)``, ``Lambda = 2 sqrt(delta) kappa / a^2``, and
    ``R = 2 sqrt(delta) kappa s_bar / a^2``.  The last is a genuine
    consistency check on the eta/R chain: the general formula assembles
    ``R`` from ``-2 Q lambda`` plus a drift-correction term, which here
    contribute ``2 delta^(3/2) kappa s_bar / a^2`` and
    ``2 sqrt(delta) (1 - delta) kappa s_bar / a^2`` — the ``delta`` and
    ``1 - delta`` weights recombine to the compact product above (to ~1 ulp),
    while ``eta`` itself stays irrational and enters only through
    ``theta = 1/2 + eta - lambda`` and ``omega = 1 + 2 eta``.
    """
    d = derive_constants(c.to_mcev(r=0.0), u)
    expected_lam = -u.delta * c.kappa * c.s_bar / c.a**2
    assert math.isclose(d.lam, expected_lam, rel_tol=1e-12), (d.lam, expected_lam)
    return d


def cir_optimal_position(inp: PolicyInput, c: CIRParams,
                         u: UtilityParams) -> float:
    """Optimal position for the square-root process.

    ``pi* = (X/S)[ delta kappa (s_bar - S)/a^2 + Lambda S B(tau)
    + (lambda + eta + 1/2) * r_K(theta, omega, Lambda A(tau) S) ]`` with
    ``Lambda = 2 sqrt(delta) kappa / a^2``.  The ``Lambda`` factor on the
    ``S B(tau)`` term is what the general formula produces under the
    substitution (beta = -1/2 makes ``z = Lambda S``, and the bracket term is
    ``-2 beta z B = Lambda S B``); the specialization cross-check test holds
    this form to 1e-9 against :func:`optimal_position`.
    """
    m = c.to_mcev(r=0.0)
    d = cir_constants(c, u)
    tau = _policy_tau(inp, m, d)
    tf = time_functions(tau, d.Q)
    w = d.Lambda * tf.A * inp.S
    try:
        ev = ratio(RatioParams(d.theta, d.omega, w))
    except ConvergenceError as exc:
        raise ConvergenceError(
            f"ratio kernel failed inside cir_optimal_position at S={inp.S}, "
            f"tau={tau}, w={w}: {exc}",
            terms_used=exc.terms_used,
            est_error=exc.est_error,
        ) from exc
    bracket = (u.delta * c.kappa * (c.s_bar - inp.S) / c.a**2
               + d.Lambda * inp.S * tf.B
               + (d.lam + d.eta + 0.5) * ev.value)
    return inp.X / inp.S * bracket
