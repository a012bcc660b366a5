"""Shared fixtures: oracle-table access and the extended-precision reference
generator (scripts/gen_oracle_table.py) importable from tests."""

from __future__ import annotations

import csv
import sys
from pathlib import Path

import pytest

_REPO_ROOT = Path(__file__).resolve().parents[1]
_SCRIPTS = _REPO_ROOT / "scripts"
if str(_SCRIPTS) not in sys.path:
    sys.path.insert(0, str(_SCRIPTS))

ORACLE_CSV = _REPO_ROOT / "src" / "mcev" / "data" / "ratio_oracle.csv"


@pytest.fixture(scope="session")
def oracle_rows() -> list[tuple[float, float, float, float]]:
    """All (theta, omega, x, value) rows of the shipped reference table."""
    rows = []
    with ORACLE_CSV.open() as fh:
        for rec in csv.DictReader(fh):
            rows.append((float(rec["theta"]), float(rec["omega"]),
                         float(rec["x"]), float(rec["value"])))
    assert rows, "oracle table is empty"
    return rows


# ---------------------------------------------------------------------------
# acceptance-criteria reporting: tests in test_acceptance.py record one
# [PASS]/[FAIL] line each, echoed in the terminal summary regardless of
# output capture
# ---------------------------------------------------------------------------

_acceptance_lines: list[str] = []


@pytest.fixture
def acceptance_line():
    """Recorder for one pass/fail line per acceptance criterion."""

    def record(line: str) -> None:
        _acceptance_lines.append(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines):
            terminalreporter.write_line(line)
