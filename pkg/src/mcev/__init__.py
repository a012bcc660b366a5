"""Closed-form optimal investment under the modified-CEV asset model.

Subpackage map
--------------
``mcev.specialfn``
    Kummer-function kernel: the ratio M(theta-1,omega,x)/M(theta,omega,x)
    by four methods, plus Bessel/Whittaker/log-gamma helpers.
``mcev.model``
    Diffusion/utility parameter containers and the derived closed-form
    constants and time factors.
``mcev.policy``
    Green function, value function, and the optimal position rule (general
    modified-CEV and its CIR mean-reversion specialization).
``mcev.montecarlo``
    Path simulation, strategy evaluation, and misspecification studies.
``mcev.backtest``
    CSV loading, CIR calibration, and out-of-sample policy backtests.
``mcev.bench``
    Timing/accuracy harness for the ratio kernel.
``mcev.cli``
    ``mcev`` command-line entry point.
"""

from ._errors import (
    ConvergenceError,
    DegenerateParameterError,
    McevDomainError,
    McevError,
    RangeOverflowError,
    SingularTimeError,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "McevError",
    "McevDomainError",
    "DegenerateParameterError",
    "SingularTimeError",
    "ConvergenceError",
    "RangeOverflowError",
]
