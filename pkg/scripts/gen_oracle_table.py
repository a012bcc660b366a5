#!/usr/bin/env python3
"""Generate the extended-precision reference table for the Kummer-ratio kernel.

This script is the accuracy ground truth for the shipped kernel.  It is
deliberately standalone: it does not import the ``mcev`` package, and the
reference values are produced by direct extended-precision summation of the
defining series (80 significant digits by default), not by the binary64
algorithms under test.

Reference functions provided for reuse by the test suite:

* ``kummer_ref(theta, omega, x)``   -- first-kind confluent hypergeometric
  series  M(theta, omega, x) = sum_s (theta)_s x^s / ((omega)_s s!).
* ``ratio_ref(theta, omega, x)``    -- M(theta-1, omega, x) / M(theta, omega, x).
* ``bessel_i_ref(order, x)``        -- modified Bessel I_nu by its power series.
* ``whittaker_m_ref(lam, eta, x)``  -- Whittaker M via the Kummer relation.
* ``log_gamma_ref(x)``              -- log Gamma at working precision.

Every Kummer value is cross-checked against an independent mpmath
implementation (``mpmath.hyp1f1``); a disagreement aborts generation, so a
bug in the summation cannot silently poison the table.

Usage:
    python scripts/gen_oracle_table.py [--out src/mcev/data/ratio_oracle.csv]
                                       [--dps 80]

The committed CSV has columns ``theta,omega,x,value`` with 40 significant
digits, which binary64 parsing rounds correctly.
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import mpmath as mp

DEFAULT_DPS = 80

# Grid matching the kernel accuracy gate: all (theta, omega) pairs crossed
# with x spanning seven decades up to the overflow-stress argument x = 800.
THETA_GRID = (0.6, 1.2, 2.5, 5.1)
OMEGA_GRID = (1.3, 2.2, 5.24)
# (theta, omega) = (1.42, 5.24) is the large-argument stress case
# lam = 1.2, eta = 2.12 mapped through theta = 1/2 + eta - lam, omega = 1 + 2 eta.
EXTRA_PAIRS = ((1.42, 5.24),)
X_GRID = (0.0, 0.01, 0.05, 0.25, 0.5, 1.0, 4.0, 10.0, 25.0, 40.0, 100.0, 400.0, 700.0, 800.0)

MAX_TERMS = 200_000


def kummer_ref(theta, omega, x, max_terms: int = MAX_TERMS):
    """First-kind confluent hypergeometric series by direct summation.

    Runs at the ambient ``mp.dps`` working precision.  The series converges
    for every finite argument; termination is a relative tail bound well
    below working precision, with a handful of guard terms because partial
    sums can pass near zero when ``theta < 1``.
    """
    theta = mp.mpf(theta)
    omega = mp.mpf(omega)
    x = mp.mpf(x)
    if omega <= 0 and omega == mp.floor(omega):
        raise ValueError(f"omega={omega} is a non-positive integer (series pole)")
    term = mp.mpf(1)
    total = mp.mpf(1)
    eps = mp.mpf(10) ** (-(mp.mp.dps + 10))
    quiet = 0
    for s in range(max_terms):
        term *= (theta + s) * x / ((omega + s) * (s + 1))
        total += term
        if abs(term) <= eps * (abs(total) + 1):
            quiet += 1
            if quiet >= 4:
                return total
        else:
            quiet = 0
    raise RuntimeError(f"kummer_ref did not converge within {max_terms} terms")


def _kummer_checked(theta, omega, x):
    """Direct summation cross-checked against mpmath's independent hyp1f1."""
    direct = kummer_ref(theta, omega, x)
    independent = mp.hyp1f1(mp.mpf(theta), mp.mpf(omega), mp.mpf(x))
    tol = mp.mpf(10) ** (-(mp.mp.dps - 15))
    denom = max(abs(direct), abs(independent), mp.mpf(1))
    if abs(direct - independent) / denom > tol:
        raise AssertionError(
            f"summation vs mpmath.hyp1f1 disagree at theta={theta} omega={omega} x={x}: "
            f"{direct} vs {independent}"
        )
    return direct


def ratio_ref(theta, omega, x, checked: bool = True):
    """Reference value of M(theta-1, omega, x) / M(theta, omega, x)."""
    f = _kummer_checked if checked else kummer_ref
    num = f(mp.mpf(theta) - 1, omega, x)
    den = f(theta, omega, x)
    if den == 0:
        raise ZeroDivisionError(f"denominator Kummer function vanished at ({theta},{omega},{x})")
    return num / den


def bessel_i_ref(order, x, max_terms: int = MAX_TERMS):
    """Modified Bessel function of the first kind by its power series."""
    order = mp.mpf(order)
    x = mp.mpf(x)
    if x == 0:
        return mp.mpf(1) if order == 0 else mp.mpf(0)
    half = x / 2
    term = half ** order / mp.gamma(order + 1)
    total = term
    eps = mp.mpf(10) ** (-(mp.mp.dps + 10))
    for s in range(1, max_terms):
        term *= half * half / (s * (order + s))
        total += term
        if abs(term) <= eps * abs(total):
            return total
    raise RuntimeError(f"bessel_i_ref did not converge within {max_terms} terms")


def whittaker_m_ref(lam, eta, x):
    """Whittaker M_{lam, eta}(x) = e^{-x/2} x^{1/2+eta} M(1/2+eta-lam, 1+2 eta, x)."""
    lam = mp.mpf(lam)
    eta = mp.mpf(eta)
    x = mp.mpf(x)
    theta = mp.mpf("0.5") + eta - lam
    omega = 1 + 2 * eta
    return mp.e ** (-x / 2) * x ** (mp.mpf("0.5") + eta) * kummer_ref(theta, omega, x)


def log_gamma_ref(x):
    """log Gamma(x) at working precision (positive real arguments)."""
    x = mp.mpf(x)
    if x <= 0:
        raise ValueError("log_gamma_ref requires x > 0")
    return mp.loggamma(x)


def generate_rows():
    pairs = [(t, w) for t in THETA_GRID for w in OMEGA_GRID]
    pairs.extend(EXTRA_PAIRS)
    for theta, omega in pairs:
        for x in X_GRID:
            value = mp.mpf(1) if x == 0.0 else ratio_ref(theta, omega, x)
            yield theta, omega, x, value


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--out",
        type=Path,
        default=Path(__file__).resolve().parent.parent / "src" / "mcev" / "data" / "ratio_oracle.csv",
    )
    parser.add_argument("--dps", type=int, default=DEFAULT_DPS)
    args = parser.parse_args(argv)

    if args.dps < 50:
        parser.error("the reference table must be generated with at least 50 digits")
    mp.mp.dps = args.dps

    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "omega", "x", "value"])
        n = 0
        for theta, omega, x, value in generate_rows():
            writer.writerow([repr(theta), repr(omega), repr(x), mp.nstr(value, 40)])
            n += 1
    print(f"wrote {n} reference values at {args.dps} digits to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
