"""Speed/accuracy harness for the Kummer-ratio kernel.

Times each evaluation method of :mod:`mcev.specialfn` over a parameter
grid whose reference values ship with the package (an extended-precision
table generated by ``scripts/gen_oracle_table.py``), and pits them against
:func:`naive_quotient` — the textbook float64 evaluation with no
rescaling, which overflows once either Kummer sum leaves binary64 range
(around ``x > 700`` for the shipped grid).

Protocol per (method, grid point): one accuracy probe against the
reference value, then — only if the probe succeeds — a few warmup calls
(excluded) and ``reps`` timed calls on the monotonic clock.  Per-call
harness overhead is measured on an empty callable and subtracted from the
reported statistics.  An evaluation *succeeds* when it returns a finite
value within ``tol`` of the reference; a convergence failure, an overflow,
or excess error all count toward ``failures``.  Benchmarking is therefore
at fixed accuracy: a method that cannot reach the tolerance shows up in
its failure count, never as a silently looser error, which is what makes
the recorded errors comparable across methods.

Speed numbers are reported, never asserted — they are hardware facts, not
contracts.  The harness is single-threaded and not thread-safe; run one
benchmark at a time (and pin the process) if you need stable numbers.
"""

from __future__ import annotations

import csv
import importlib.resources
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._errors import ConvergenceError, McevDomainError, RangeOverflowError
from .specialfn import (
    RatioMethod,
    RatioParams,
    _max_terms_cap,
    _ratio_direct,
    ratio,
    ratio_continued_fraction,
    ratio_large_x,
    ratio_small_x,
)

__all__ = [
    "NAIVE_METHOD",
    "AUTO_METHOD",
    "DEFAULT_METHODS",
    "BenchConfig",
    "BenchEntry",
    "BenchReport",
    "load_oracle_table",
    "naive_quotient",
    "run_bench",
    "export_bench_csv",
]

NAIVE_METHOD = "naive_quotient"
AUTO_METHOD = "auto"

#: Every kernel method plus the naive baseline; ``auto`` (the dispatcher)
#: is available opt-in.
DEFAULT_METHODS = (
    RatioMethod.SMALL_X_SERIES.value,
    RatioMethod.LARGE_X_SERIES.value,
    RatioMethod.CONTINUED_FRACTION.value,
    RatioMethod.DIRECT_QUOTIENT.value,
    NAIVE_METHOD,
)

_WARMUP = 3


# ---------------------------------------------------------------------------
# naive baseline
# ---------------------------------------------------------------------------


def naive_quotient(p: RatioParams, max_terms: int | None = None) -> float:
    """``M(theta-1, omega, x) / M(theta, omega, x)`` the obvious way.

    Both series are summed directly in float64 with no rescaling and no
    error model — the baseline every kernel method is measured against.

    Raises
    ------
    RangeOverflowError
        Either sum left binary64 range (``exp(x)`` growth defeats plain
        summation around ``x ~ 700``).
    ConvergenceError
        Term cap hit before the terms became negligible.
    """
    if p.x == 0.0:
        return 1.0
    cap = _max_terms_cap(max_terms)

    def plain_sum(theta: float) -> float:
        total = 1.0
        term = 1.0
        for k in range(cap):
            term *= (theta + k) * p.x / ((p.omega + k) * (k + 1.0))
            total += term
            if not math.isfinite(total):
                raise RangeOverflowError(
                    f"naive Kummer sum left binary64 range at x={p.x}, "
                    f"theta={theta}, omega={p.omega}"
                )
            if abs(term) <= 1e-17 * abs(total):
                return total
        raise ConvergenceError(
            f"naive Kummer sum hit the {cap}-term cap at x={p.x}",
            terms_used=cap,
        )

    numer = plain_sum(p.theta - 1.0)
    denom = plain_sum(p.theta)
    if denom == 0.0 or not math.isfinite(numer / denom):
        raise RangeOverflowError(
            f"naive quotient degenerate at x={p.x}: {numer!r} / {denom!r}"
        )
    return numer / denom


_EVALUATORS: dict[str, Callable[[RatioParams, float, int | None], float]] = {
    RatioMethod.SMALL_X_SERIES.value:
        lambda p, tol, mt: ratio_small_x(p, tol, mt).value,
    RatioMethod.LARGE_X_SERIES.value:
        lambda p, tol, mt: ratio_large_x(p, tol, mt).value,
    RatioMethod.CONTINUED_FRACTION.value:
        lambda p, tol, mt: ratio_continued_fraction(p, tol, mt).value,
    RatioMethod.DIRECT_QUOTIENT.value:
        lambda p, tol, mt: _ratio_direct(p, tol, mt).value,
    AUTO_METHOD:
        lambda p, tol, mt: ratio(p, tol, mt).value,
    NAIVE_METHOD:
        lambda p, tol, mt: naive_quotient(p, mt),
}


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchConfig:
    """What to benchmark.

    ``x_grid`` filters the reference table to the listed arguments (empty
    means every tabulated ``x``); ``reps`` timed repetitions per point;
    ``tol`` is the accuracy an evaluation must reach to count as a
    success; ``methods`` is the subset of evaluators to run.
    """

    x_grid: tuple[float, ...] = ()
    reps: int = 10_000
    tol: float = 1e-10
    methods: tuple[str, ...] = DEFAULT_METHODS

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_grid", tuple(float(x) for x in self.x_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        if any(not (math.isfinite(x) and x >= 0.0) for x in self.x_grid):
            raise McevDomainError("x_grid entries must be finite and >= 0")
        if not (isinstance(self.reps, int) and not isinstance(self.reps, bool)
                and self.reps >= 1):
            raise McevDomainError(f"reps must be an integer >= 1, got {self.reps!r}")
        if not (isinstance(self.tol, (int, float)) and math.isfinite(self.tol)
                and self.tol > 0.0):
            raise McevDomainError(f"tol must be > 0, got {self.tol!r}")
        unknown = [m for m in self.methods if m not in _EVALUATORS]
        if unknown:
            raise McevDomainError(
                f"unknown methods {unknown}; available: {sorted(_EVALUATORS)}"
            )
        if not self.methods:
            raise McevDomainError("methods must not be empty")


@dataclass(frozen=True)
class BenchEntry:
    """Aggregate over every grid point sharing one (method, x).

    Timing statistics cover successful evaluations only and have the
    harness baseline subtracted; both are NaN when every point failed.
    ``max_abs_rel_err`` is the worst error among successes (NaN likewise).
    """

    method: str
    x: float
    median_ns: float
    p90_ns: float
    max_abs_rel_err: float
    failures: int
    n_points: int


@dataclass(frozen=True)
class BenchReport:
    """All entries of one run plus the measured harness baseline.

    Construction enforces the accuracy contract: a non-NaN recorded error
    never exceeds ``tol`` (evaluations worse than that are failures and
    carry no error).
    """

    tol: float
    baseline_ns: float
    entries: tuple[BenchEntry, ...]
    skipped: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "skipped", tuple(self.skipped))
        for e in self.entries:
            if not math.isnan(e.max_abs_rel_err) and e.max_abs_rel_err > self.tol:
                raise McevDomainError(
                    f"entry ({e.method}, x={e.x}) records error "
                    f"{e.max_abs_rel_err:.3g} above tol={self.tol}"
                )


# ---------------------------------------------------------------------------
# oracle table
# ---------------------------------------------------------------------------


def load_oracle_table() -> tuple[tuple[float, float, float, float], ...]:
    """The shipped extended-precision rows ``(theta, omega, x, value)``.

    Regenerate with ``scripts/gen_oracle_table.py`` (50-digit arithmetic);
    the file format is a plain CSV with that header.
    """
    resource = importlib.resources.files("mcev").joinpath("data/ratio_oracle.csv")
    rows = []
    with resource.open("r", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append((float(rec["theta"]), float(rec["omega"]),
                         float(rec["x"]), float(rec["value"])))
    if not rows:
        raise McevDomainError("shipped oracle table is empty")
    return tuple(rows)


def _lookup(table, theta: float, omega: float, x: float) -> float | None:
    for t, o, xx, v in table:
        if (math.isclose(t, theta, rel_tol=1e-12, abs_tol=1e-12)
                and math.isclose(o, omega, rel_tol=1e-12, abs_tol=1e-12)
                and math.isclose(xx, x, rel_tol=1e-12, abs_tol=1e-12)):
            return v
    return None


# ---------------------------------------------------------------------------
# harness
# ---------------------------------------------------------------------------


def _time_samples(fn: Callable[[], object], reps: int) -> np.ndarray:
    """Per-call wall times in ns on the monotonic clock, warmup excluded."""
    for _ in range(_WARMUP):
        fn()
    clock = time.perf_counter_ns
    out = np.empty(reps, dtype=np.float64)
    for i in range(reps):
        t0 = clock()
        fn()
        out[i] = clock() - t0
    return out


def _noop() -> None:
    return None


def run_bench(cfg: BenchConfig,
              grid: Sequence[RatioParams] | None = None) -> BenchReport:
    """Benchmark the configured methods over a parameter grid.

    ``grid`` defaults to every row of the shipped reference table whose
    ``x`` appears in ``cfg.x_grid`` (or all rows when ``x_grid`` is
    empty).  Grid points with no reference value are skipped with a note
    in ``BenchReport.skipped`` — accuracy is meaningless without a
    reference, and timing an unverified evaluation would not be
    comparable.

    Single-threaded by design; see the module docstring.
    """
    table = load_oracle_table()
    if grid is None:
        rows = [r for r in table
                if not cfg.x_grid
                or any(math.isclose(r[2], x, rel_tol=1e-12, abs_tol=1e-12)
                       for x in cfg.x_grid)]
        grid = [RatioParams(theta=t, omega=o, x=x) for t, o, x, _ in rows]
    if not grid:
        raise McevDomainError("benchmark grid is empty")

    baseline_ns = float(np.median(_time_samples(_noop, cfg.reps)))
    skipped: list[str] = []
    entries: list[BenchEntry] = []
    for method in cfg.methods:
        fn = _EVALUATORS[method]
        buckets: dict[float, dict] = {}
        for p in grid:
            reference = _lookup(table, p.theta, p.omega, p.x)
            if reference is None:
                skipped.append(
                    f"{method}: no reference for theta={p.theta}, "
                    f"omega={p.omega}, x={p.x}"
                )
                continue
            bucket = buckets.setdefault(
                p.x, {"samples": [], "errs": [], "failures": 0, "n": 0})
            bucket["n"] += 1
            try:
                value = fn(p, cfg.tol, None)
                err = abs(value - reference) / abs(reference)
                ok = math.isfinite(value) and err <= cfg.tol
            except (ConvergenceError, RangeOverflowError, McevDomainError):
                # Not converged, out of binary64 range, or the method's own
                # domain excludes this point — all count as failures here.
                ok = False
            if not ok:
                bucket["failures"] += 1
                continue
            bucket["errs"].append(err)
            bucket["samples"].append(
                _time_samples(lambda: fn(p, cfg.tol, None), cfg.reps))
        for x in sorted(buckets):
            b = buckets[x]
            if b["samples"]:
                samples = np.concatenate(b["samples"])
                median_ns = max(float(np.median(samples)) - baseline_ns, 0.0)
                p90_ns = max(float(np.percentile(samples, 90.0)) - baseline_ns,
                             0.0)
                max_err = max(b["errs"])
            else:
                median_ns = p90_ns = max_err = float("nan")
            entries.append(BenchEntry(
                method=method, x=x, median_ns=median_ns, p90_ns=p90_ns,
                max_abs_rel_err=max_err, failures=b["failures"],
                n_points=b["n"],
            ))
    return BenchReport(tol=cfg.tol, baseline_ns=baseline_ns,
                       entries=tuple(entries), skipped=tuple(skipped))


def export_bench_csv(dest, report: BenchReport) -> int:
    """Write ``method, x, median_ns, p90_ns, rel_err, failures`` rows.

    NaN statistics (all-failed entries) are written as empty fields so the
    CSV stays plotting-friendly.  Returns the number of data rows.
    """
    writer = csv.writer(dest)
    writer.writerow(["method", "x", "median_ns", "p90_ns", "rel_err",
                     "failures"])
    for e in report.entries:
        fmt = lambda v: "" if math.isnan(v) else f"{v:.6g}"  # noqa: E731
        writer.writerow([e.method, f"{e.x:.10g}", fmt(e.median_ns),
                         fmt(e.p90_ns), fmt(e.max_abs_rel_err), e.failures])
    return len(report.entries)
