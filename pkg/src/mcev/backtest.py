"""Historical backtest of the mean-reversion policy on daily rate data.

Pipeline: ``load_csv`` ingests a ``date,rate`` series, ``calibrate_cir``
fits the square-root process ``dS = kappa (s_bar - S) dt + a sqrt(S) dW``,
and ``run_backtest`` trades the closed-form optimal position once per
observation under the zero-interest self-financing rule

    X_{k+1} = X_k + pi_k (S_{k+1} - S_k),

reporting total return and maximum drawdown against a buy-and-hold
benchmark holding ``X0 / S0`` units throughout.

Calibration rests on one observation: dividing the Euler step by
``sqrt(S_k)`` makes the noise homoskedastic,

    (S_{k+1} - S_k)/sqrt(S_k)
        = kappa s_bar dt * (1/sqrt(S_k)) - kappa dt * sqrt(S_k)
          + a sqrt(dt) eps_k,

so an ordinary regression on ``(1/sqrt(S_k), sqrt(S_k))`` recovers the
drift, and the residual standard deviation divided by ``sqrt(dt)``
recovers ``a``.  The Gaussian quasi-likelihood of the same Euler scheme
weights squared errors by ``1/S_k`` and therefore profiles to this exact
least-squares problem; ``method = MLE`` consequently returns identical
drift estimates and differs only in the variance normalization (``1/n``
instead of ``1/(n - 2)``) and the matching standard errors.

The clock is a day-count convention: every observation step advances time
by a fixed ``dt`` (default 1/252), deliberately decoupled from calendar
gaps so weekends and holidays do not distort the policy horizon.

Wealth reaching zero ends a run: power utility is undefined at
non-positive wealth, so the series is truncated at the first non-positive
value (clipped to exactly zero) and the report is flagged ``bankrupt``.
"""

from __future__ import annotations

import csv
import datetime
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from ._errors import McevDomainError
from .model import UtilityParams
from .policy import CIRParams, PolicyInput, cir_optimal_position

__all__ = [
    "DEFAULT_DAYCOUNT",
    "RateSeries",
    "CalibrationMethod",
    "CIRCalibration",
    "BacktestReport",
    "load_csv",
    "calibrate_cir",
    "run_backtest",
    "max_drawdown",
    "report_to_dict",
    "export_report_csv",
]

# Trading-day convention: one observation step = 1/252 of a year.
DEFAULT_DAYCOUNT = 252


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateSeries:
    """Positive rate observations on strictly increasing calendar dates.

    ``dt`` is the year fraction assigned to one observation step.  It is a
    convention, not a calendar difference: consecutive rows are one step
    apart regardless of weekends or gaps between their dates.
    """

    dates: tuple[datetime.date, ...]
    rates: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "dates", tuple(self.dates))
        rates = np.asarray(self.rates, dtype=np.float64)
        object.__setattr__(self, "rates", rates)
        if rates.ndim != 1 or len(self.dates) != rates.shape[0]:
            raise McevDomainError("dates and rates must be equal-length 1-d series")
        if rates.shape[0] == 0:
            raise McevDomainError("empty rate series")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise McevDomainError("dates must be strictly increasing")
        if not np.all(np.isfinite(rates)) or np.any(rates <= 0.0):
            raise McevDomainError("rates must be finite and > 0")
        if not (isinstance(self.dt, (int, float)) and math.isfinite(self.dt)
                and self.dt > 0.0):
            raise McevDomainError(f"dt must be finite and > 0, got {self.dt!r}")

    def __len__(self) -> int:
        return len(self.dates)

    def window(self, start: datetime.date | None = None,
               end: datetime.date | None = None) -> "RateSeries":
        """Sub-series with ``start <= date <= end`` (inclusive bounds).

        ``None`` leaves that side unbounded.  An empty window is an error.
        """
        lo = 0
        hi = len(self.dates)
        if start is not None:
            while lo < hi and self.dates[lo] < start:
                lo += 1
        if end is not None:
            while hi > lo and self.dates[hi - 1] > end:
                hi -= 1
        if lo == hi:
            raise McevDomainError(f"no observations in window [{start}, {end}]")
        return RateSeries(dates=self.dates[lo:hi], rates=self.rates[lo:hi],
                          dt=self.dt)


class CalibrationMethod(str, Enum):
    """How the square-root process parameters are estimated."""

    OLS_EULER = "ols-euler"
    MLE = "mle"


@dataclass(frozen=True)
class CIRCalibration:
    """Estimated square-root parameters with per-parameter standard errors.

    ``stderr`` maps ``kappa``, ``s_bar``, ``a`` to large-sample standard
    errors.  A fit with ``kappa <= 0`` is rejected at construction: without
    mean reversion the trading policy has no anchor to revert to.
    ``n_obs`` counts the rate observations used (the drift regression has
    ``n_obs - 1`` rows).
    """

    kappa: float
    s_bar: float
    a: float
    method: CalibrationMethod
    stderr: Mapping[str, float]
    n_obs: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", CalibrationMethod(self.method))
        if not (isinstance(self.kappa, (int, float)) and math.isfinite(self.kappa)
                and self.kappa > 0.0):
            raise McevDomainError(
                f"non-mean-reverting calibration: kappa = {self.kappa!r} "
                "(mean reversion requires kappa > 0)"
            )
        for name in ("s_bar", "a"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0.0):
                raise McevDomainError(f"{name} must be finite and > 0, got {v!r}")
        missing = {"kappa", "s_bar", "a"} - set(self.stderr)
        if missing:
            raise McevDomainError(f"stderr missing entries for {sorted(missing)}")
        if any(not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0.0)
               for v in self.stderr.values()):
            raise McevDomainError("standard errors must be finite and >= 0")
        object.__setattr__(self, "stderr", MappingProxyType(dict(self.stderr)))
        if not (isinstance(self.n_obs, int) and self.n_obs >= 2):
            raise McevDomainError(f"n_obs must be an integer >= 2, got {self.n_obs!r}")

    def to_cir_params(self) -> CIRParams:
        """The fitted process as consumed by the policy layer."""
        return CIRParams(kappa=self.kappa, s_bar=self.s_bar, a=self.a)


@dataclass(frozen=True)
class BacktestReport:
    """Wealth and position history of one backtest run.

    ``positions[k]`` is the asset position held from ``dates[k]`` to
    ``dates[k+1]``, so ``positions`` has one fewer entry than ``wealth``.
    Returns and drawdowns are fractions; drawdowns are <= 0.  ``bankrupt``
    marks a run truncated because wealth reached zero; the benchmark
    figures always cover the full input window.
    """

    dates: tuple[datetime.date, ...]
    wealth: np.ndarray
    positions: np.ndarray
    total_return: float
    max_drawdown: float
    benchmark_return: float
    benchmark_drawdown: float
    bankrupt: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "dates", tuple(self.dates))
        wealth = np.asarray(self.wealth, dtype=np.float64)
        positions = np.asarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "wealth", wealth)
        object.__setattr__(self, "positions", positions)
        if wealth.ndim != 1 or positions.ndim != 1:
            raise McevDomainError("wealth and positions must be 1-d series")
        if len(self.dates) != wealth.shape[0] or positions.shape[0] != wealth.shape[0] - 1:
            raise McevDomainError(
                "need one wealth value per date and one position per step"
            )
        if not np.all(np.isfinite(wealth)) or wealth[0] <= 0.0 or np.any(wealth < 0.0):
            raise McevDomainError("wealth must be finite, start > 0, and stay >= 0")
        if not np.all(np.isfinite(positions)):
            raise McevDomainError("positions must be finite")
        for name in ("max_drawdown", "benchmark_drawdown"):
            v = getattr(self, name)
            if not (math.isfinite(v) and -1.0 <= v <= 0.0):
                raise McevDomainError(f"{name} must lie in [-1, 0], got {v!r}")
        for name in ("total_return", "benchmark_return"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= -1.0):
                raise McevDomainError(f"{name} must be finite and >= -1, got {v!r}")


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def load_csv(path, daycount: int = DEFAULT_DAYCOUNT) -> RateSeries:
    """Read a ``date,rate`` CSV into a validated :class:`RateSeries`.

    The header must be ``date,rate`` (case-insensitive); dates are ISO-8601
    ``YYYY-MM-DD``.  Rows arriving out of order are sorted with a warning;
    duplicated dates, malformed fields, and non-positive rates are rejected
    with the offending 1-based line number.  ``dt`` is set to
    ``1/daycount``.
    """
    if not (isinstance(daycount, int) and not isinstance(daycount, bool)
            and daycount > 0):
        raise McevDomainError(f"daycount must be a positive integer, got {daycount!r}")
    rows: list[tuple[datetime.date, float]] = []
    first_line: dict[datetime.date, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise McevDomainError(f"{path}: empty file")
        if [col.strip().lower() for col in header] != ["date", "rate"]:
            raise McevDomainError(
                f"{path}: line 1: expected header 'date,rate', "
                f"got {','.join(header)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:  # tolerate blank lines (e.g. trailing newline)
                continue
            if len(row) != 2:
                raise McevDomainError(
                    f"{path}: line {lineno}: expected 2 fields, got {len(row)}"
                )
            try:
                day = datetime.date.fromisoformat(row[0].strip())
            except ValueError:
                raise McevDomainError(
                    f"{path}: line {lineno}: malformed ISO date {row[0]!r}"
                ) from None
            try:
                rate = float(row[1])
            except ValueError:
                raise McevDomainError(
                    f"{path}: line {lineno}: malformed rate {row[1]!r}"
                ) from None
            if not (math.isfinite(rate) and rate > 0.0):
                raise McevDomainError(
                    f"{path}: line {lineno}: rate must be finite and > 0, got {rate}"
                )
            if day in first_line:
                raise McevDomainError(
                    f"{path}: line {lineno}: duplicated date {day.isoformat()} "
                    f"(first seen on line {first_line[day]})"
                )
            first_line[day] = lineno
            rows.append((day, rate))
    if not rows:
        raise McevDomainError(f"{path}: no data rows")
    if any(b[0] < a[0] for a, b in zip(rows, rows[1:])):
        warnings.warn(f"{path}: dates out of order; sorting", RuntimeWarning,
                      stacklevel=2)
        rows.sort(key=lambda item: item[0])
    return RateSeries(
        dates=tuple(day for day, _ in rows),
        rates=np.array([rate for _, rate in rows], dtype=np.float64),
        dt=1.0 / daycount,
    )


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def calibrate_cir(s: RateSeries,
                  method: CalibrationMethod = CalibrationMethod.OLS_EULER,
                  ) -> CIRCalibration:
    """Fit ``dS = kappa (s_bar - S) dt + a sqrt(S) dW`` to a rate series.

    Regresses ``(S_{k+1} - S_k)/sqrt(S_k)`` on ``(1/sqrt(S_k), sqrt(S_k))``
    — see the module docstring for why this is both the natural OLS and the
    exact Gaussian quasi-ML drift fit — then divides the coefficients
    ``(kappa s_bar dt, -kappa dt)`` by ``dt`` and takes ``a`` as the
    residual standard deviation over ``sqrt(dt)``.  Standard errors: the
    usual regression covariance for ``kappa``, the delta method on the
    coefficient ratio for ``s_bar``, and ``a / sqrt(2 dof)`` for ``a``.
    ``method`` selects the normalization ``dof = n - 2`` (OLS_EULER) or
    ``dof = n`` (MLE); the drift point estimates are identical.

    Raises
    ------
    McevDomainError
        Fewer than 100 observations; a rank-deficient design (constant
        series); an implied ``kappa <= 0`` (non-mean-reverting, with the
        estimate in the message); or zero residual variance.
    """
    method = CalibrationMethod(method)
    n_obs = len(s)
    if n_obs < 100:
        raise McevDomainError(
            f"need at least 100 observations to calibrate, got {n_obs}"
        )
    S = s.rates[:-1]
    root = np.sqrt(S)
    y = np.diff(s.rates) / root
    Z = np.column_stack((1.0 / root, root))
    coef, _, rank, _ = np.linalg.lstsq(Z, y, rcond=None)
    if rank < 2:
        raise McevDomainError(
            "degenerate regression: design matrix is rank deficient "
            "(constant rate series?)"
        )
    c1, c2 = float(coef[0]), float(coef[1])  # (kappa s_bar dt, -kappa dt)
    kappa = -c2 / s.dt
    if kappa <= 0.0:
        raise McevDomainError(
            f"non-mean-reverting fit: implied kappa = {kappa:.6g} <= 0 "
            "(the drift does not pull the rate back toward a mean)"
        )
    s_bar = -c1 / c2
    resid = y - Z @ coef
    ssr = float(resid @ resid)
    n = y.shape[0]
    dof = n - 2 if method is CalibrationMethod.OLS_EULER else n
    if ssr <= 0.0 or dof <= 0:
        raise McevDomainError("degenerate regression: zero residual variance")
    sigma2 = ssr / dof
    a = math.sqrt(sigma2 / s.dt)

    # Covariance of (c1, c2) is sigma2 (Z'Z)^{-1}; the cross moment is
    # exactly n because the two regressors multiply to 1.
    g11 = float(Z[:, 0] @ Z[:, 0])
    g22 = float(Z[:, 1] @ Z[:, 1])
    g12 = float(n)
    det = g11 * g22 - g12 * g12
    if det <= 0.0:
        raise McevDomainError("degenerate regression: singular normal equations")
    var_c1 = sigma2 * g22 / det
    var_c2 = sigma2 * g11 / det
    cov_c12 = -sigma2 * g12 / det
    se_kappa = math.sqrt(var_c2) / s.dt
    # Delta method on s_bar = -c1/c2.
    d1 = -1.0 / c2
    d2 = c1 / c2**2
    se_s_bar = math.sqrt(max(d1 * d1 * var_c1 + d2 * d2 * var_c2
                             + 2.0 * d1 * d2 * cov_c12, 0.0))
    se_a = a / math.sqrt(2.0 * dof)
    return CIRCalibration(
        kappa=kappa, s_bar=s_bar, a=a, method=method,
        stderr={"kappa": se_kappa, "s_bar": se_s_bar, "a": se_a},
        n_obs=n_obs,
    )


# ---------------------------------------------------------------------------
# metrics and the backtest loop
# ---------------------------------------------------------------------------


def max_drawdown(wealth: Sequence[float] | np.ndarray) -> float:
    """Worst peak-to-trough decline of a wealth series.

    ``min_k (W_k - max_{j<=k} W_j) / max_{j<=k} W_j``, a fraction in
    [-1, 0].  The series must start positive and stay non-negative so every
    running peak is positive.
    """
    w = np.asarray(wealth, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise McevDomainError("max_drawdown needs a non-empty 1-d series")
    if not np.all(np.isfinite(w)) or w[0] <= 0.0 or np.any(w < 0.0):
        raise McevDomainError(
            "wealth series must be finite, start > 0, and stay >= 0"
        )
    peaks = np.maximum.accumulate(w)
    return float(np.min((w - peaks) / peaks))


def run_backtest(s: RateSeries, c: CIRCalibration, u: UtilityParams,
                 X0: float, T: float) -> BacktestReport:
    """Trade the closed-form optimal position through a historical series.

    Each observation step rebalances to ``pi_k`` = the optimal position at
    ``(X_k, S_k, t_k = k dt)`` with horizon ``T``, then applies the
    zero-interest self-financing update
    ``X_{k+1} = X_k + pi_k (S_{k+1} - S_k)``.  ``T`` must cover the
    observation span ``(len(s) - 1) dt``.  The benchmark buys ``X0 / S0``
    units at the first observation and holds; its return is computed as
    ``S_end / S_0 - 1`` exactly.

    If wealth reaches zero the run stops there: the offending value is
    clipped to exactly 0, the series is truncated, and the report is
    flagged ``bankrupt`` (benchmark metrics still cover the full window).
    """
    if not (isinstance(X0, (int, float)) and math.isfinite(X0) and X0 > 0.0):
        raise McevDomainError(f"X0 must be finite and > 0, got {X0!r}")
    if not (isinstance(T, (int, float)) and math.isfinite(T) and T > 0.0):
        raise McevDomainError(f"T must be finite and > 0, got {T!r}")
    n = len(s)
    if n < 2:
        raise McevDomainError("need at least 2 observations to trade")
    span = (n - 1) * s.dt
    if T < span - 1e-9:
        raise McevDomainError(
            f"horizon T = {T} is shorter than the observation span {span:.6g}"
        )
    params = c.to_cir_params()
    rates = s.rates
    wealth = np.empty(n, dtype=np.float64)
    positions = np.empty(n - 1, dtype=np.float64)
    wealth[0] = float(X0)
    bankrupt = False
    end = n
    for k in range(n - 1):
        state = PolicyInput(X=float(wealth[k]), S=float(rates[k]),
                            t=k * s.dt, T=T)
        pi = cir_optimal_position(state, params, u)
        positions[k] = pi
        x_next = wealth[k] + pi * (rates[k + 1] - rates[k])
        wealth[k + 1] = x_next
        if x_next <= 0.0:
            wealth[k + 1] = 0.0
            bankrupt = True
            end = k + 2
            break
    return BacktestReport(
        dates=s.dates[:end],
        wealth=wealth[:end],
        positions=positions[:end - 1],
        total_return=float(wealth[end - 1]) / float(X0) - 1.0,
        max_drawdown=max_drawdown(wealth[:end]),
        benchmark_return=float(rates[-1] / rates[0] - 1.0),
        benchmark_drawdown=max_drawdown(rates),
        bankrupt=bankrupt,
    )


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------


def report_to_dict(report: BacktestReport, calibration: CIRCalibration) -> dict:
    """JSON-ready summary; the full series are exported separately as CSV.

    ``n_days`` counts rebalancing steps (one fewer than the observations
    covered by the wealth series).
    """
    return {
        "total_return": report.total_return,
        "max_drawdown": report.max_drawdown,
        "benchmark_return": report.benchmark_return,
        "benchmark_drawdown": report.benchmark_drawdown,
        "n_days": len(report.positions),
        "bankrupt": report.bankrupt,
        "params": {
            "kappa": calibration.kappa,
            "s_bar": calibration.s_bar,
            "a": calibration.a,
            "method": calibration.method.value,
            "n_obs": calibration.n_obs,
            "stderr": dict(calibration.stderr),
        },
    }


def export_report_csv(dest, report: BacktestReport) -> int:
    """Write ``date, wealth, position`` rows to a writable text file.

    ``position`` is blank on the final row (nothing is held past the last
    observation).  Returns the number of data rows written.
    """
    writer = csv.writer(dest)
    writer.writerow(["date", "wealth", "position"])
    for k, day in enumerate(report.dates):
        pos = f"{report.positions[k]:.12g}" if k < len(report.positions) else ""
        writer.writerow([day.isoformat(), f"{report.wealth[k]:.12g}", pos])
    return len(report.dates)
