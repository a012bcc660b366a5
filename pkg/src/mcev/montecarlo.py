"""Monte Carlo engine: price paths, trading strategies, terminal statistics.

Price paths follow either the modified-CEV dynamics

    dS_s / S_s = [alpha + c a^2 S^(2 beta)] ds + a S^beta dW_s,

discretized by Euler or Milstein steps with absorption at zero (for
``beta < 0`` the origin is attainable and is treated as a default event), or
the square-root mean-reverting dynamics

    dS_s = kappa (s_bar - S_s) ds + a sqrt(S_s) dW_s,

discretized by the full-truncation scheme (negative excursions are clipped
to zero inside drift and diffusion, the raw chain keeps evolving; see Lord,
Koekkoek & van Dijk, *A comparison of biased simulation schemes for
stochastic volatility models*, Quant. Finance 10 (2010)).

Wealth follows the self-financing update

    X_{k+1} = X_k + r (X_k - pi_k S_k) dt + pi_k (S_{k+1} - S_k),

where ``pi_k`` is the position (units of the asset) prescribed by the
strategy at state ``(X_k, S_k, t_k)``.

Randomness is splittable: every path gets its own counter-based generator
(Philox) seeded from ``SeedSequence(seed).spawn(path_index)``, so path k's
increments depend only on ``(seed, k)`` — results are reproducible
path-by-path and independent of execution order or thread scheduling.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from ._errors import McevDomainError
from .model import MCEVParams, UtilityParams, derive_constants
from .policy import CIRParams, position_fraction_array

__all__ = [
    "Scheme",
    "SimConfig",
    "PathSet",
    "StrategyKind",
    "StrategySpec",
    "WealthPath",
    "TerminalStats",
    "simulate_mcev",
    "simulate_cir",
    "run_strategy",
    "misspecification_study",
    "terminal_stats",
    "stats_to_dict",
    "export_paths_csv",
    "LEVERAGE_CAP",
]

#: Positions with |pi S / X| above this are clipped (and the path flagged):
#: near-absorbed paths make the S^(-2 beta - 1) factor of the policy blow up.
LEVERAGE_CAP = 1e6

_DEFAULT_GRID_BUDGET = 1 << 26


def _grid_budget() -> int:
    """Largest allowed n_paths * (n_steps + 1), overridable via MCEV_MC_BUDGET."""
    raw = os.environ.get("MCEV_MC_BUDGET")
    if raw is None:
        return _DEFAULT_GRID_BUDGET
    try:
        budget = int(raw)
        if budget < 1:
            raise ValueError
    except ValueError:
        raise McevDomainError(
            f"MCEV_MC_BUDGET must be a positive integer, got {raw!r}"
        ) from None
    return budget


class Scheme(str, Enum):
    """Time-stepping scheme for the price discretization."""

    EULER = "euler"
    MILSTEIN = "milstein"


class StrategyKind(str, Enum):
    BOND_ONLY = "bond_only"
    ASSET_ONLY = "asset_only"
    OPTIMAL_POLICY = "optimal_policy"
    CONSTANT_FRACTION = "constant_fraction"


@dataclass(frozen=True)
class SimConfig:
    """Simulation size, seed, and scheme.

    The seed fully determines the output; ``n_paths * (n_steps + 1)`` must
    stay within the memory budget (default 2^26 grid elements, override with
    the ``MCEV_MC_BUDGET`` environment variable).
    """

    n_paths: int
    n_steps: int
    seed: int
    scheme: Scheme = Scheme.EULER

    def __post_init__(self) -> None:
        if not isinstance(self.n_paths, int) or self.n_paths < 1:
            raise McevDomainError(f"n_paths must be an integer >= 1, got {self.n_paths!r}")
        if not isinstance(self.n_steps, int) or self.n_steps < 1:
            raise McevDomainError(f"n_steps must be an integer >= 1, got {self.n_steps!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise McevDomainError(f"seed must be a non-negative integer, got {self.seed!r}")
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        budget = _grid_budget()
        if self.n_paths * (self.n_steps + 1) > budget:
            raise McevDomainError(
                f"n_paths * (n_steps + 1) = {self.n_paths * (self.n_steps + 1)} "
                f"exceeds the memory budget of {budget} grid elements"
            )

    @classmethod
    def from_config(cls, cfg: Mapping[str, object]) -> "SimConfig":
        """Build from a flat mapping with keys n_paths, n_steps, seed[, scheme]."""
        try:
            return cls(
                n_paths=int(cfg["n_paths"]),
                n_steps=int(cfg["n_steps"]),
                seed=int(cfg["seed"]),
                scheme=Scheme(cfg.get("scheme", Scheme.EULER)),
            )
        except KeyError as exc:
            raise McevDomainError(f"missing simulation key {exc.args[0]!r}") from exc
        except ValueError as exc:
            raise McevDomainError(f"bad simulation config: {exc}") from exc


@dataclass(frozen=True)
class PathSet:
    """Simulated price paths on a uniform grid.

    Attributes
    ----------
    times : ndarray, shape (n_steps + 1,)
        Uniform grid on [0, T].
    values : ndarray, shape (n_paths, n_steps + 1)
        Non-negative prices; column 0 is the common initial price.
    absorbed : ndarray of bool, shape (n_paths,)
        True for paths absorbed at zero (default event); such paths are zero
        from the absorption step onward.
    """

    times: np.ndarray
    values: np.ndarray
    absorbed: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != self.times.shape[0]:
            raise McevDomainError("values must be n_paths x (n_steps + 1)")
        if self.absorbed.shape != (self.values.shape[0],):
            raise McevDomainError("absorbed must have one flag per path")

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1] - 1


@dataclass(frozen=True)
class StrategySpec:
    """Which position rule to run.

    ``fraction`` is the constant wealth fraction held in the asset and is
    required (finite) exactly when ``kind = CONSTANT_FRACTION``.
    """

    kind: StrategyKind
    fraction: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.kind is StrategyKind.CONSTANT_FRACTION:
            if self.fraction is None or not math.isfinite(self.fraction):
                raise McevDomainError(
                    "CONSTANT_FRACTION requires a finite fraction"
                )
        elif self.fraction is not None:
            raise McevDomainError(f"{self.kind.value} takes no fraction")


@dataclass(frozen=True)
class WealthPath:
    """One path of the self-financing wealth dynamics.

    ``positions[k]`` is the position held on ``[times[k], times[k+1])``.
    ``failed`` marks paths whose wealth left the valid domain (non-finite or
    negative); they are excluded from statistics.  ``leverage_capped`` marks
    paths where the position hit the exposure cap at least once.
    """

    times: np.ndarray
    wealth: np.ndarray
    positions: np.ndarray
    failed: bool = False
    leverage_capped: bool = False


@dataclass(frozen=True)
class TerminalStats:
    """Summary of the terminal wealth distribution.

    ``certainty_equivalent`` is ``(gamma * mean U(X_T))^(1/gamma)``, i.e. the
    sure wealth with the same expected utility.  ``n_excluded`` reports paths
    dropped from the statistics (failed wealth dynamics).
    """

    mean: float
    std: float
    quantiles: dict[str, float]
    certainty_equivalent: float
    n_excluded: int = 0

    def __post_init__(self) -> None:
        levels = list(self.quantiles.values())
        if any(b < a for a, b in zip(levels, levels[1:])):
            raise McevDomainError("quantiles must be monotone in level")


_QUANTILE_LEVELS = (("1%", 0.01), ("5%", 0.05), ("50%", 0.50),
                    ("95%", 0.95), ("99%", 0.99))


# ---------------------------------------------------------------------------
# path generation
# ---------------------------------------------------------------------------


def _path_normals(seed: int, n_paths: int, n_steps: int) -> np.ndarray:
    """Standard-normal increments, one splittable substream per path."""
    children = np.random.SeedSequence(seed).spawn(n_paths)
    out = np.empty((n_paths, n_steps), dtype=np.float64)
    for k, child in enumerate(children):
        out[k] = np.random.Generator(np.random.Philox(child)).standard_normal(n_steps)
    return out


def _stability_check(n_steps: int, T: float, local_var: float) -> None:
    threshold = 50.0 * T * local_var
    if n_steps < threshold:
        warnings.warn(
            f"n_steps = {n_steps} is below the stability heuristic "
            f"50 * T * local-variance = {threshold:.3g}; the discretization "
            "may be coarse",
            RuntimeWarning,
            stacklevel=3,
        )


def _validate_horizon(S0: float, T: float) -> None:
    if not (math.isfinite(S0) and S0 > 0.0):
        raise McevDomainError(f"S0 must be finite and > 0, got {S0}")
    if not (math.isfinite(T) and T > 0.0):
        raise McevDomainError(f"T must be finite and > 0, got {T}")


def simulate_mcev(m: MCEVParams, S0: float, T: float, cfg: SimConfig) -> PathSet:
    """Simulate modified-CEV price paths.

    Paths hitting ``S <= 0`` are absorbed at zero permanently (default
    event).  Output is fully determined by ``cfg.seed``.

    Parameters
    ----------
    m : MCEVParams
    S0 : float
        Initial price, > 0.
    T : float
        Horizon, > 0.
    cfg : SimConfig

    Returns
    -------
    PathSet
    """
    _validate_horizon(S0, T)
    _stability_check(cfg.n_steps, T, m.a**2 * S0 ** (2.0 * m.beta))
    dt = T / cfg.n_steps
    sqdt = math.sqrt(dt)
    Z = _path_normals(cfg.seed, cfg.n_paths, cfg.n_steps)
    values = np.zeros((cfg.n_paths, cfg.n_steps + 1), dtype=np.float64)
    values[:, 0] = S0
    absorbed = np.zeros(cfg.n_paths, dtype=bool)
    s = np.full(cfg.n_paths, S0, dtype=np.float64)
    milstein = cfg.scheme is Scheme.MILSTEIN
    for j in range(cfg.n_steps):
        alive = ~absorbed
        # evaluate coefficients on a safe dummy price for absorbed paths
        # (their next value is forced to zero below)
        se = np.where(alive, s, 1.0)
        s2b = se ** (2.0 * m.beta)
        drift = se * (m.alpha + m.c * m.a**2 * s2b)
        diff = m.a * se ** (m.beta + 1.0)
        step = drift * dt + diff * sqdt * Z[:, j]
        if milstein:
            step += (0.5 * m.a**2 * (m.beta + 1.0) * se ** (2.0 * m.beta + 1.0)
                     * dt * (Z[:, j] ** 2 - 1.0))
        s_next = np.where(alive, se + step, 0.0)
        hit = alive & (s_next <= 0.0)
        absorbed |= hit
        s = np.where(absorbed, 0.0, s_next)
        values[:, j + 1] = s
    return PathSet(times=np.linspace(0.0, T, cfg.n_steps + 1), values=values,
                   absorbed=absorbed)


def simulate_cir(c: CIRParams, S0: float, T: float, cfg: SimConfig) -> PathSet:
    """Simulate square-root mean-reverting paths by full truncation.

    The raw chain may dip below zero; drift and diffusion see the clipped
    value and the reported path is the clipped value, so prices are >= 0.
    With ``scheme = MILSTEIN`` the (constant) Milstein correction
    ``a^2/4 (Z^2 - 1) dt`` is added, still under truncation.

    Returns
    -------
    PathSet
        ``absorbed`` is all-False: zero is not absorbing here (the drift
        pushes the process back up).
    """
    _validate_horizon(S0, T)
    _stability_check(cfg.n_steps, T, c.a**2 / max(S0, c.s_bar))
    dt = T / cfg.n_steps
    sqdt = math.sqrt(dt)
    Z = _path_normals(cfg.seed, cfg.n_paths, cfg.n_steps)
    values = np.zeros((cfg.n_paths, cfg.n_steps + 1), dtype=np.float64)
    values[:, 0] = S0
    raw = np.full(cfg.n_paths, S0, dtype=np.float64)
    milstein = cfg.scheme is Scheme.MILSTEIN
    for j in range(cfg.n_steps):
        clipped = np.maximum(raw, 0.0)
        step = (c.kappa * (c.s_bar - clipped) * dt
                + c.a * np.sqrt(clipped) * sqdt * Z[:, j])
        if milstein:
            step += 0.25 * c.a**2 * dt * (Z[:, j] ** 2 - 1.0)
        raw = raw + step
        values[:, j + 1] = np.maximum(raw, 0.0)
    return PathSet(times=np.linspace(0.0, T, cfg.n_steps + 1), values=values,
                   absorbed=np.zeros(cfg.n_paths, dtype=bool))


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------


def run_strategy(paths: PathSet, s: StrategySpec, m: MCEVParams,
                 u: UtilityParams, X0: float, T: float) -> list[WealthPath]:
    """Run a position rule over simulated paths.

    The wealth update per step is the discrete self-financing identity
    ``X_{k+1} = X_k + r (X_k - pi_k S_k) dt + pi_k (S_{k+1} - S_k)``; the
    bond rate is ``m.r``.  On zero-price (absorbed) states the position is
    zero and wealth compounds at the bond rate.  Positions with
    ``|pi S / X| > LEVERAGE_CAP`` are clipped and the path flagged; paths
    whose wealth becomes non-finite or materially negative are flagged
    ``failed`` and excluded from statistics downstream, while wealth within
    a rounding error of zero is snapped to exact ruin (a fully invested
    path whose asset defaults ends at wealth zero, not at a failure flag).

    Parameters
    ----------
    paths : PathSet
    s : StrategySpec
    m, u : MCEVParams, UtilityParams
        Model the *trader believes in* (drives OPTIMAL_POLICY positions and
        the bond rate); the realized prices live in ``paths``.
    X0 : float
        Initial wealth, > 0.
    T : float
        Horizon (must match the path grid's last time).

    Returns
    -------
    list of WealthPath
        One per path, sharing storage with internal matrices.
    """
    if not (math.isfinite(X0) and X0 > 0.0):
        raise McevDomainError(f"X0 must be finite and > 0, got {X0}")
    times = paths.times
    if not math.isclose(times[-1], T, rel_tol=1e-12, abs_tol=1e-12):
        raise McevDomainError(
            f"path grid ends at {times[-1]}, expected horizon T = {T}"
        )
    n_paths, n_steps = paths.n_paths, paths.n_steps
    dt = float(times[1] - times[0])
    d = derive_constants(m, u) if s.kind is StrategyKind.OPTIMAL_POLICY else None

    W = np.empty((n_paths, n_steps + 1), dtype=np.float64)
    W[:, 0] = X0
    P = np.zeros((n_paths, n_steps), dtype=np.float64)
    failed = np.zeros(n_paths, dtype=bool)
    capped = np.zeros(n_paths, dtype=bool)

    x = np.full(n_paths, X0, dtype=np.float64)
    for k in range(n_steps):
        s_k = paths.values[:, k]
        s_next = paths.values[:, k + 1]
        ok = (~failed) & (s_k > 0.0) & (x > 0.0)
        pi = np.zeros(n_paths, dtype=np.float64)
        if s.kind is StrategyKind.ASSET_ONLY:
            pi[ok] = x[ok] / s_k[ok]
        elif s.kind is StrategyKind.CONSTANT_FRACTION:
            pi[ok] = s.fraction * x[ok] / s_k[ok]
        elif s.kind is StrategyKind.OPTIMAL_POLICY:
            if np.any(ok):
                frac = position_fraction_array(
                    s_k[ok], float(times[k]), T, m, u, d
                )
                pi[ok] = frac * x[ok]
        # BOND_ONLY keeps pi = 0

        exposure = np.zeros(n_paths, dtype=np.float64)
        exposure[ok] = np.abs(pi[ok] * s_k[ok] / x[ok])
        over = exposure > LEVERAGE_CAP
        if np.any(over):
            pi[over] = np.sign(pi[over]) * LEVERAGE_CAP * x[over] / s_k[over]
            capped |= over

        P[:, k] = pi
        x_next = x + m.r * (x - pi * s_k) * dt + pi * (s_next - s_k)
        # full investment into a price that absorbs at zero leaves wealth a
        # rounding error from zero; snap that neighborhood to exact ruin so
        # it is not mistaken for failed dynamics
        tiny = (32.0 * np.finfo(np.float64).eps
                * (np.abs(x) + np.abs(pi * s_k) + np.abs(pi) * s_next))
        x_next = np.where(np.abs(x_next) <= tiny, 0.0, x_next)
        bad = (~failed) & ((~np.isfinite(x_next)) | (x_next < 0.0))
        failed |= bad
        x = np.where(failed, x, x_next)
        # keep flagged paths frozen at their last valid wealth
        W[:, k + 1] = x

    out = []
    for k in range(n_paths):
        out.append(
            WealthPath(times=times, wealth=W[k], positions=P[k],
                       failed=bool(failed[k]), leverage_capped=bool(capped[k]))
        )
    return out


def terminal_stats(wealths: Sequence[WealthPath], u: UtilityParams) -> TerminalStats:
    """Summarize terminal wealth: moments, type-7 quantiles, certainty
    equivalent ``CE = (gamma * mean U(X_T))^(1/gamma)``.

    Failed paths are excluded and counted in ``n_excluded`` (a warning is
    emitted when any are dropped).  Zero terminal wealth is legitimate
    (absorbed full-investment paths): for ``gamma < 0`` it drives the CE to
    zero, as ruin should.

    Raises
    ------
    McevDomainError
        On empty input or if every path failed.
    """
    if len(wealths) == 0:
        raise McevDomainError("no wealth paths to summarize")
    x_t = np.array([w.wealth[-1] for w in wealths if not w.failed])
    n_excluded = len(wealths) - x_t.size
    if x_t.size == 0:
        raise McevDomainError("every wealth path failed; nothing to summarize")
    if n_excluded:
        warnings.warn(
            f"excluded {n_excluded} failed wealth path(s) from statistics",
            RuntimeWarning,
            stacklevel=2,
        )
    gamma = u.gamma
    with np.errstate(divide="ignore"):
        mean_pow = float(np.mean(x_t**gamma))
    ce = 0.0 if math.isinf(mean_pow) else mean_pow ** (1.0 / gamma)
    qs = np.quantile(x_t, [lvl for _, lvl in _QUANTILE_LEVELS])  # type-7
    return TerminalStats(
        mean=float(np.mean(x_t)),
        std=float(np.std(x_t, ddof=1)) if x_t.size > 1 else 0.0,
        quantiles={name: float(q) for (name, _), q in zip(_QUANTILE_LEVELS, qs)},
        certainty_equivalent=float(ce),
        n_excluded=n_excluded,
    )


def misspecification_study(true_m: MCEVParams, assumed_m: MCEVParams,
                           u: UtilityParams, S0: float, X0: float, T: float,
                           cfg: SimConfig) -> tuple[TerminalStats, TerminalStats]:
    """Trade the optimal policy under misspecified parameters.

    Simulates one set of paths under ``true_m`` and runs two traders on the
    *same* paths (common random numbers): one computing positions from
    ``assumed_m``, one from ``true_m``.

    Returns
    -------
    (misspecified, true) : tuple of TerminalStats
        With ``assumed_m == true_m`` the two coincide exactly.
    """
    paths = simulate_mcev(true_m, S0, T, cfg)
    spec = StrategySpec(kind=StrategyKind.OPTIMAL_POLICY)
    wp_assumed = run_strategy(paths, spec, assumed_m, u, X0, T)
    wp_true = run_strategy(paths, spec, true_m, u, X0, T)
    return terminal_stats(wp_assumed, u), terminal_stats(wp_true, u)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def stats_to_dict(stats: TerminalStats) -> dict:
    """JSON-ready view of a TerminalStats."""
    return {
        "mean": stats.mean,
        "std": stats.std,
        "quantiles": dict(stats.quantiles),
        "certainty_equivalent": stats.certainty_equivalent,
        "n_excluded": stats.n_excluded,
    }


def export_paths_csv(dest, paths: PathSet,
                     wealths: Sequence[WealthPath] | None = None,
                     max_paths: int | None = None) -> int:
    """Write per-path rows ``path_id, t, S, X, pi`` to a writable text file.

    ``X`` and ``pi`` are blank without wealth paths; ``pi`` is blank on the
    terminal row (no further rebalance).  Returns the number of paths
    written (the first ``max_paths``, or all).
    """
    import csv

    n = paths.n_paths if max_paths is None else min(max_paths, paths.n_paths)
    writer = csv.writer(dest)
    writer.writerow(["path_id", "t", "S", "X", "pi"])
    for k in range(n):
        w = wealths[k] if wealths is not None else None
        for j, t in enumerate(paths.times):
            row = [k, f"{t:.10g}", f"{paths.values[k, j]:.12g}"]
            if w is None:
                row += ["", ""]
            else:
                row.append(f"{w.wealth[j]:.12g}")
                row.append(f"{w.positions[j]:.12g}" if j < len(w.positions) else "")
            writer.writerow(row)
    return n
