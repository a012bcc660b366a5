#!/usr/bin/env python3
"""Regenerate the shipped synthetic rate series used by CLI/backtest tests.

Simulates two years of daily square-root-diffusion rates with a fixed seed
and writes them as a ``date,rate`` CSV to ``src/mcev/data/cir_fixture.csv``.
The file is committed; rerunning this script must reproduce it byte for byte
(the simulator is seed-deterministic).

Usage:  python3 scripts/gen_backtest_fixture.py
"""

import csv
import datetime as dt
import pathlib

from mcev.montecarlo import SimConfig, simulate_cir
from mcev.policy import CIRParams

SEED = 1
YEARS = 2
DAYCOUNT = 252
PARAMS = CIRParams(kappa=0.1090, s_bar=1.32675, a=0.28789)
S0 = PARAMS.s_bar
START = dt.date(2020, 1, 2)

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "mcev" / "data" / "cir_fixture.csv"


def main() -> None:
    n_steps = YEARS * DAYCOUNT
    paths = simulate_cir(PARAMS, S0, float(YEARS),
                         SimConfig(n_paths=1, n_steps=n_steps, seed=SEED))
    rates = paths.values[0]
    assert rates.min() > 0.0, "fixture series must be strictly positive"
    with OUT.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "rate"])
        for k, rate in enumerate(rates):
            writer.writerow([(START + dt.timedelta(days=k)).isoformat(),
                             f"{rate:.12g}"])
    print(f"wrote {len(rates)} rows to {OUT}")


if __name__ == "__main__":
    main()
