"""Command-line surface: every library capability behind one executable.

The console script ``mcev`` dispatches on a single subcommand per
invocation:

========== ==============================================================
ratio      evaluate the Kummer-quotient kernel at one point (JSON)
policy     optimal position pi* and value multiplier f at a state (JSON)
value      indirect utility J and f at a state (JSON)
simulate   write simulated price paths (and optional wealth paths) as CSV
misspec    paired terminal statistics: misspecified vs true trader (JSON)
calibrate  fit square-root-diffusion parameters to a date,rate CSV (JSON)
backtest   daily rebalancing backtest on a date,rate CSV (JSON report)
bench      ratio-kernel accuracy/timing table (CSV)
========== ==============================================================

Conventions
-----------
* Scalar and report outputs are JSON on stdout; series go to CSV files
  (or stdout for ``bench`` when ``--out`` is omitted).  Every number
  printed is the value returned by the corresponding library call — the
  CLI never recomputes or rounds, so outputs match in-process results
  bit for bit.
* Exit codes: 0 on success, 1 on a domain error (bad parameter values,
  malformed data files, non-convergence), 2 on a usage error (unknown
  command or flag, missing required argument).  Domain errors print the
  originating module's message on stderr.
* All outputs are deterministic given the flags, including seeds.
  (Benchmark *timings* are hardware-dependent by nature; every other
  column of the bench CSV is deterministic.)
* Model config files are flat JSON objects.  The modified-CEV schema is
  ``{"a", "beta", "c", "alpha", "r", "gamma"}``; a square-root-diffusion
  schema ``{"kappa", "s_bar", "a", "gamma"[, "r"]}`` is accepted anywhere
  a model is expected and is mapped onto the equivalent modified-CEV
  parameterization (``policy`` then uses the specialized closed form).
* The ``MCEV_MAX_TERMS`` environment variable caps series terms and
  continued-fraction depth for all kernel evaluations.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from collections.abc import Mapping, Sequence
from pathlib import Path

from . import backtest as bt
from ._errors import McevDomainError, McevError
from .bench import BenchConfig, export_bench_csv, run_bench
from .model import MCEVParams, UtilityParams
from .montecarlo import (
    Scheme,
    SimConfig,
    StrategyKind,
    StrategySpec,
    export_paths_csv,
    misspecification_study,
    run_strategy,
    simulate_cir,
    simulate_mcev,
    stats_to_dict,
    terminal_stats,
)
from .policy import (
    CIRParams,
    PolicyInput,
    cir_optimal_position,
    optimal_position,
    value_function,
    value_multiplier,
)
from .specialfn import RatioParams, ratio

__all__ = ["main"]


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------


def _emit_json(payload: Mapping[str, object]) -> None:
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise McevDomainError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise McevDomainError(f"{path}: top-level JSON value must be an object")
    return cfg


def _parse_model(cfg: Mapping[str, object]) -> tuple[MCEVParams, CIRParams | None]:
    """Read a model config; square-root-diffusion configs are detected by
    the ``kappa`` key and mapped onto the modified-CEV parameterization."""
    if "kappa" in cfg:
        cir = CIRParams.from_config(cfg)
        return cir.to_mcev(r=float(cfg.get("r", 0.0))), cir
    return MCEVParams.from_config(cfg), None


def _require_float(cfg: Mapping[str, object], key: str, path: str) -> float:
    if key not in cfg:
        raise McevDomainError(f"{path}: missing required key {key!r}")
    try:
        return float(cfg[key])  # type: ignore[arg-type]
    except (TypeError, ValueError) as exc:
        raise McevDomainError(f"{path}: key {key!r} must be a number") from exc


def _calibration_from_json(cfg: Mapping[str, object], path: str) -> bt.CIRCalibration:
    stderr = cfg.get("stderr", {"kappa": 0.0, "s_bar": 0.0, "a": 0.0})
    if not isinstance(stderr, Mapping):
        raise McevDomainError(f"{path}: 'stderr' must be an object")
    try:
        return bt.CIRCalibration(
            kappa=float(cfg["kappa"]),  # type: ignore[arg-type]
            s_bar=float(cfg["s_bar"]),  # type: ignore[arg-type]
            a=float(cfg["a"]),  # type: ignore[arg-type]
            method=bt.CalibrationMethod(cfg.get("method", "ols-euler")),
            stderr={k: float(v) for k, v in stderr.items()},
            n_obs=int(cfg.get("n_obs", 2)),  # type: ignore[arg-type]
        )
    except KeyError as exc:
        raise McevDomainError(f"{path}: missing calibration key {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise McevDomainError(f"{path}: bad calibration value ({exc})") from exc


def _calibration_to_dict(cal: bt.CIRCalibration) -> dict:
    return {
        "kappa": cal.kappa,
        "s_bar": cal.s_bar,
        "a": cal.a,
        "method": cal.method.value,
        "n_obs": cal.n_obs,
        "stderr": dict(cal.stderr),
    }


def _load_grid(path: str) -> list[RatioParams]:
    """Read an evaluation grid CSV with header ``theta,omega,x``."""
    grid: list[RatioParams] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip().lower() for f in reader.fieldnames] != [
            "theta",
            "omega",
            "x",
        ]:
            raise McevDomainError(f"{path}: expected header 'theta,omega,x'")
        for lineno, row in enumerate(reader, start=2):
            try:
                grid.append(
                    RatioParams(
                        theta=float(row["theta"]),
                        omega=float(row["omega"]),
                        x=float(row["x"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise McevDomainError(f"{path}: line {lineno}: bad grid row ({exc})") from exc
    if not grid:
        raise McevDomainError(f"{path}: grid file has no data rows")
    return grid


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_ratio(args: argparse.Namespace) -> int:
    ev = ratio(RatioParams(theta=args.theta, omega=args.omega, x=args.x), tol=args.tol)
    _emit_json(
        {
            "value": ev.value,
            "method": ev.method.value,
            "terms_used": ev.terms_used,
            "est_error": ev.est_error,
        }
    )
    return 0


def _state(args: argparse.Namespace) -> PolicyInput:
    return PolicyInput(X=args.X, S=args.S, t=args.t, T=args.T)


def _cmd_policy(args: argparse.Namespace) -> int:
    cfg = _load_json(args.config)
    u = UtilityParams.from_config(cfg)
    m, cir = _parse_model(cfg)
    inp = _state(args)
    if cir is not None:
        pi = cir_optimal_position(inp, cir, u)
    else:
        pi = optimal_position(inp, m, u)
    f = value_multiplier(args.S, args.t, args.T, m, u)
    _emit_json({"pi_star": pi, "f": f, "model": "cir" if cir is not None else "mcev"})
    return 0


def _cmd_value(args: argparse.Namespace) -> int:
    cfg = _load_json(args.config)
    u = UtilityParams.from_config(cfg)
    m, _ = _parse_model(cfg)
    inp = _state(args)
    _emit_json(
        {
            "value": value_function(inp, m, u),
            "f": value_multiplier(args.S, args.t, args.T, m, u),
        }
    )
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_json(args.config)
    m, cir = _parse_model(cfg)
    s0 = _require_float(cfg, "S0", args.config)
    horizon = _require_float(cfg, "T", args.config)
    sim = SimConfig(n_paths=args.paths, n_steps=args.steps, seed=args.seed,
                    scheme=Scheme(args.scheme))
    if cir is not None:
        paths = simulate_cir(cir, s0, horizon, sim)
    else:
        paths = simulate_mcev(m, s0, horizon, sim)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = ["paths.csv"]
    wealths = None
    if "strategy" in cfg:
        u = UtilityParams.from_config(cfg)
        x0 = _require_float(cfg, "X0", args.config)
        try:
            spec = StrategySpec(
                kind=StrategyKind(str(cfg["strategy"])),
                fraction=float(cfg["fraction"]) if "fraction" in cfg else None,  # type: ignore[arg-type]
            )
        except ValueError as exc:
            raise McevDomainError(f"{args.config}: bad strategy ({exc})") from exc
        wealths = run_strategy(paths, spec, m, u, x0, horizon)
        stats = terminal_stats(wealths, u)
        (out_dir / "stats.json").write_text(
            json.dumps(stats_to_dict(stats), indent=2) + "\n", encoding="utf-8"
        )
        files.append("stats.json")

    with (out_dir / "paths.csv").open("w", newline="", encoding="utf-8") as fh:
        written = export_paths_csv(fh, paths, wealths, max_paths=args.max_paths)
    _emit_json(
        {
            "out_dir": str(out_dir),
            "files": files,
            "n_paths": paths.n_paths,
            "n_steps": paths.n_steps,
            "paths_written": written,
            "absorbed": int(paths.absorbed.sum()),
        }
    )
    return 0


def _cmd_misspec(args: argparse.Namespace) -> int:
    m_true, _ = _parse_model(_load_json(args.true))
    m_assumed, _ = _parse_model(_load_json(args.assumed))
    u = UtilityParams(gamma=args.gamma)
    sim = SimConfig(n_paths=args.paths, n_steps=args.steps, seed=args.seed)
    mis, tru = misspecification_study(m_true, m_assumed, u, args.S0, args.X0, args.T, sim)
    payload = {"misspecified": stats_to_dict(mis), "true": stats_to_dict(tru)}
    if args.out is not None:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    _emit_json(payload)
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    series = bt.load_csv(args.data, daycount=args.daycount)
    cal = bt.calibrate_cir(series, method=bt.CalibrationMethod(args.method))
    payload = _calibration_to_dict(cal)
    if args.out is not None:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    _emit_json(payload)
    return 0


def _cmd_backtest(args: argparse.Namespace) -> int:
    series = bt.load_csv(args.data, daycount=args.daycount)
    cal = _calibration_from_json(_load_json(args.calib), args.calib)
    u = UtilityParams(gamma=args.gamma)
    horizon = args.horizon
    if horizon is None:
        horizon = (len(series) - 1) * series.dt
    report = bt.run_backtest(series, cal, u, X0=args.x0, T=horizon)
    if args.out is not None:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            bt.export_report_csv(fh, report)
    _emit_json(bt.report_to_dict(report, cal))
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    methods = tuple(args.methods.split(",")) if args.methods else None
    cfg = BenchConfig(
        x_grid=tuple(args.x) if args.x else (),
        reps=args.reps,
        tol=args.tol,
        **({"methods": methods} if methods else {}),
    )
    grid = _load_grid(args.grid) if args.grid else None
    report = run_bench(cfg, grid=grid)
    for note in report.skipped:
        print(f"note: {note}", file=sys.stderr)
    if args.out is not None:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            export_bench_csv(fh, report)
    else:
        export_bench_csv(sys.stdout, report)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcev",
        description="Optimal-investment engine for the modified-CEV asset model.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("ratio", help="evaluate the Kummer-quotient kernel")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--omega", type=float, required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(handler=_cmd_ratio)

    for name, handler, help_text in (
        ("policy", _cmd_policy, "optimal position and value multiplier"),
        ("value", _cmd_value, "indirect utility and value multiplier"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="model JSON (see README)")
        p.add_argument("--S", type=float, required=True, help="asset price")
        p.add_argument("--X", type=float, required=True, help="wealth")
        p.add_argument("--t", type=float, default=0.0, help="current time")
        p.add_argument("--T", type=float, required=True, help="horizon")
        p.set_defaults(handler=handler)

    p = sub.add_parser("simulate", help="simulate price (and wealth) paths to CSV")
    p.add_argument("--config", required=True, help="model JSON with S0, T (see README)")
    p.add_argument("--paths", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default=Scheme.EULER.value)
    p.add_argument("--max-paths", type=int, default=None, help="cap paths written to CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("misspec", help="misspecified vs true trader on common paths")
    p.add_argument("--true", required=True, help="true model JSON")
    p.add_argument("--assumed", required=True, help="assumed model JSON")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--S0", type=float, required=True)
    p.add_argument("--X0", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--paths", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None, help="also write the JSON here")
    p.set_defaults(handler=_cmd_misspec)

    p = sub.add_parser("calibrate", help="fit square-root-diffusion parameters")
    p.add_argument("--data", required=True, help="date,rate CSV")
    p.add_argument("--daycount", type=int, default=252)
    p.add_argument(
        "--method",
        choices=[m.value for m in bt.CalibrationMethod],
        default=bt.CalibrationMethod.OLS_EULER.value,
    )
    p.add_argument("--out", default=None, help="also write the JSON here")
    p.set_defaults(handler=_cmd_calibrate)

    p = sub.add_parser("backtest", help="daily rebalancing backtest")
    p.add_argument("--data", required=True, help="date,rate CSV")
    p.add_argument("--calib", required=True, help="calibration JSON (from 'calibrate')")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--x0", type=float, required=True, help="initial wealth")
    p.add_argument("--daycount", type=int, default=252)
    p.add_argument("--horizon", type=float, default=None,
                   help="policy horizon in years (default: the data span)")
    p.add_argument("--out", default=None, help="write date,wealth,position CSV here")
    p.set_defaults(handler=_cmd_backtest)

    p = sub.add_parser("bench", help="ratio-kernel accuracy/timing table")
    p.add_argument("--grid", default=None, help="CSV of theta,omega,x points")
    p.add_argument("--x", type=float, action="append", default=None,
                   help="restrict the built-in table to these x values (repeatable)")
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--methods", default=None, help="comma-separated method names")
    p.add_argument("--out", default=None, help="write the CSV here (default stdout)")
    p.set_defaults(handler=_cmd_bench)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits itself: 2 on usage, 0 on --help
        code = exc.code
        if code is None:
            return 0
        return code if isinstance(code, int) else 2
    try:
        return args.handler(args)
    except McevError as exc:
        print(f"mcev: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"mcev: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
