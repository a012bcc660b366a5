"""Tests for CSV ingestion, square-root calibration, and the daily backtest."""

import dataclasses
import datetime
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcev import McevDomainError
from mcev.backtest import (
    DEFAULT_DAYCOUNT,
    BacktestReport,
    CalibrationMethod,
    CIRCalibration,
    RateSeries,
    calibrate_cir,
    export_report_csv,
    load_csv,
    max_drawdown,
    report_to_dict,
    run_backtest,
)
from mcev.model import UtilityParams
from mcev.montecarlo import SimConfig, simulate_cir
from mcev.policy import CIRParams

KAPPA_REF, SBAR_REF, A_REF = 0.1090, 1.32675, 0.28789
REF_PROCESS = CIRParams(kappa=KAPPA_REF, s_bar=SBAR_REF, a=A_REF)
REF_UTILITY = UtilityParams(gamma=-7.0)

# 25y daily simulation whose OLS fit lands inside every recovery gate.
RECOVERY_SEED = 5
# Re-simulation seed for the two-standard-error consistency round trip.
ROUNDTRIP_SEED = 2
# One-year series for pipeline smoke tests.
SMOKE_SEED = 29


def make_series(values, dt=1.0 / 252, start=datetime.date(2016, 7, 1)):
    values = np.asarray(values, dtype=np.float64)
    dates = tuple(start + datetime.timedelta(days=k) for k in range(len(values)))
    return RateSeries(dates=dates, rates=values, dt=dt)


def simulated_series(params: CIRParams, seed: int, years: int = 25) -> RateSeries:
    cfg = SimConfig(n_paths=1, n_steps=years * 252, seed=seed)
    values = simulate_cir(params, params.s_bar, float(years), cfg).values[0]
    assert np.all(values > 0.0), "pinned seed must not touch zero"
    return make_series(values)


def reference_calibration(**overrides) -> CIRCalibration:
    kwargs = dict(kappa=KAPPA_REF, s_bar=SBAR_REF, a=A_REF,
                  method=CalibrationMethod.OLS_EULER,
                  stderr={"kappa": 0.0, "s_bar": 0.0, "a": 0.0}, n_obs=1383)
    kwargs.update(overrides)
    return CIRCalibration(**kwargs)


@pytest.fixture(scope="module")
def recovery():
    """25-year simulated series at the reference parameters plus its OLS fit."""
    series = simulated_series(REF_PROCESS, RECOVERY_SEED)
    return series, calibrate_cir(series)


@pytest.fixture(scope="module")
def smoke_report():
    series = simulated_series(REF_PROCESS, SMOKE_SEED, years=1)
    return series, run_backtest(series, reference_calibration(), REF_UTILITY,
                                X0=1000.0, T=1.0)


class TestRateSeries:
    def test_length_mismatch_rejected(self):
        dates = (datetime.date(2020, 1, 1), datetime.date(2020, 1, 2))
        with pytest.raises(McevDomainError, match="equal-length"):
            RateSeries(dates=dates, rates=np.array([1.0]), dt=1 / 252)

    def test_dates_must_increase(self):
        d = datetime.date(2020, 1, 2)
        with pytest.raises(McevDomainError, match="strictly increasing"):
            RateSeries(dates=(d, d), rates=np.array([1.0, 1.1]), dt=1 / 252)

    def test_rates_must_be_positive(self):
        with pytest.raises(McevDomainError, match="finite and > 0"):
            make_series([1.0, 0.0, 1.2])

    def test_dt_validated(self):
        dates = (datetime.date(2020, 1, 1),)
        with pytest.raises(McevDomainError, match="dt"):
            RateSeries(dates=dates, rates=np.array([1.0]), dt=0.0)

    def test_empty_rejected(self):
        with pytest.raises(McevDomainError, match="empty"):
            RateSeries(dates=(), rates=np.array([]), dt=1 / 252)

    def test_len(self):
        assert len(make_series([1.0, 1.1, 1.2])) == 3

    def test_window_inclusive_bounds(self):
        s = make_series(np.linspace(1.0, 2.0, 10))
        start, end = s.dates[2], s.dates[6]
        w = s.window(start, end)
        assert w.dates == s.dates[2:7]
        np.testing.assert_array_equal(w.rates, s.rates[2:7])
        assert w.dt == s.dt

    def test_window_open_sides(self):
        s = make_series(np.linspace(1.0, 2.0, 5))
        assert s.window(None, s.dates[1]).dates == s.dates[:2]
        assert s.window(s.dates[3], None).dates == s.dates[3:]

    def test_window_empty_is_error(self):
        s = make_series([1.0, 1.1])
        with pytest.raises(McevDomainError, match="no observations"):
            s.window(datetime.date(2030, 1, 1), None)


class TestLoadCsv:
    def write(self, tmp_path, text, name="rates.csv"):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p

    def test_two_row_file(self, tmp_path):
        p = self.write(tmp_path, "date,rate\n2016-07-01,1.30\n2016-07-04,1.31\n")
        s = load_csv(p)
        assert len(s) == 2
        assert s.dates == (datetime.date(2016, 7, 1), datetime.date(2016, 7, 4))
        np.testing.assert_allclose(s.rates, [1.30, 1.31])
        assert s.dt == 1.0 / DEFAULT_DAYCOUNT

    def test_unsorted_sorted_with_warning(self, tmp_path):
        p = self.write(tmp_path,
                       "date,rate\n2016-07-04,1.31\n2016-07-01,1.30\n")
        with pytest.warns(RuntimeWarning, match="out of order"):
            s = load_csv(p)
        assert s.dates[0] < s.dates[1]
        np.testing.assert_allclose(s.rates, [1.30, 1.31])

    def test_duplicate_date_rejected_with_line(self, tmp_path):
        p = self.write(tmp_path,
                       "date,rate\n2016-07-01,1.30\n2016-07-02,1.31\n"
                       "2016-07-01,1.32\n")
        with pytest.raises(McevDomainError, match="line 4.*duplicated date"):
            load_csv(p)

    @pytest.mark.parametrize(
        "row, pattern",
        [
            ("2016-07-02,1.31,extra", "line 3: expected 2 fields"),
            ("07/02/2016,1.31", "line 3: malformed ISO date"),
            ("2016-07-02,abc", "line 3: malformed rate"),
            ("2016-07-02,-1.31", "line 3: rate must be finite and > 0"),
            ("2016-07-02,nan", "line 3: rate must be finite and > 0"),
        ],
    )
    def test_bad_rows_report_line_numbers(self, tmp_path, row, pattern):
        p = self.write(tmp_path, f"date,rate\n2016-07-01,1.30\n{row}\n")
        with pytest.raises(McevDomainError, match=pattern):
            load_csv(p)

    def test_header_required(self, tmp_path):
        p = self.write(tmp_path, "day,price\n2016-07-01,1.30\n")
        with pytest.raises(McevDomainError, match="expected header 'date,rate'"):
            load_csv(p)

    def test_empty_file(self, tmp_path):
        p = self.write(tmp_path, "")
        with pytest.raises(McevDomainError, match="empty file"):
            load_csv(p)

    def test_header_only(self, tmp_path):
        p = self.write(tmp_path, "date,rate\n")
        with pytest.raises(McevDomainError, match="no data rows"):
            load_csv(p)

    def test_blank_lines_tolerated(self, tmp_path):
        p = self.write(tmp_path,
                       "date,rate\n2016-07-01,1.30\n\n2016-07-04,1.31\n\n")
        assert len(load_csv(p)) == 2

    def test_daycount_sets_dt(self, tmp_path):
        p = self.write(tmp_path, "date,rate\n2016-07-01,1.30\n2016-07-04,1.31\n")
        assert load_csv(p, daycount=365).dt == 1.0 / 365

    @pytest.mark.parametrize("daycount", [0, -252, 1.5, True])
    def test_bad_daycount(self, tmp_path, daycount):
        p = self.write(tmp_path, "date,rate\n2016-07-01,1.30\n")
        with pytest.raises(McevDomainError, match="daycount"):
            load_csv(p, daycount=daycount)

    def test_header_case_insensitive(self, tmp_path):
        p = self.write(tmp_path, "Date, Rate\n2016-07-01,1.30\n2016-07-04,1.31\n")
        assert len(load_csv(p)) == 2


class TestCIRCalibrationType:
    def test_non_positive_kappa_rejected(self):
        with pytest.raises(McevDomainError, match="non-mean-reverting"):
            reference_calibration(kappa=-0.05)

    def test_missing_stderr_key(self):
        with pytest.raises(McevDomainError, match="stderr missing"):
            reference_calibration(stderr={"kappa": 0.0, "a": 0.0})

    def test_negative_stderr_rejected(self):
        with pytest.raises(McevDomainError, match="standard errors"):
            reference_calibration(stderr={"kappa": -1.0, "s_bar": 0.0, "a": 0.0})

    def test_n_obs_validated(self):
        with pytest.raises(McevDomainError, match="n_obs"):
            reference_calibration(n_obs=1)

    def test_method_coerced_from_string(self):
        cal = reference_calibration(method="mle")
        assert cal.method is CalibrationMethod.MLE

    def test_to_cir_params(self):
        p = reference_calibration().to_cir_params()
        assert (p.kappa, p.s_bar, p.a) == (KAPPA_REF, SBAR_REF, A_REF)


class TestCalibrateCir:
    def test_recovers_simulated_parameters(self, recovery):
        _, cal = recovery
        assert abs(cal.s_bar / SBAR_REF - 1.0) <= 0.05
        assert abs(cal.a / A_REF - 1.0) <= 0.05
        # Mean-reversion speed is weakly identified on any finite span, so
        # the gate is its own (wide) standard error rather than a percentage.
        assert abs(cal.kappa - KAPPA_REF) <= cal.stderr["kappa"]
        assert cal.method is CalibrationMethod.OLS_EULER
        assert cal.n_obs == 25 * 252 + 1

    def test_roundtrip_consistency_within_2se(self, recovery):
        _, cal0 = recovery
        series = simulated_series(cal0.to_cir_params(), ROUNDTRIP_SEED)
        cal2 = calibrate_cir(series)
        for name in ("kappa", "s_bar", "a"):
            dev = abs(getattr(cal2, name) - getattr(cal0, name))
            assert dev <= 2.0 * cal2.stderr[name], name

    def test_constant_series_degenerate(self):
        with pytest.raises(McevDomainError, match="degenerate regression"):
            calibrate_cir(make_series(np.full(150, 1.3)))

    def test_minimum_observations(self):
        with pytest.raises(McevDomainError, match="at least 100"):
            calibrate_cir(make_series(np.linspace(1.0, 2.0, 99)))

    def test_growth_series_non_mean_reverting(self):
        rng = np.random.default_rng(3)
        growth = np.cumprod(1.0 + 0.004 + 0.001 * rng.standard_normal(400))
        with pytest.raises(McevDomainError, match="non-mean-reverting"):
            calibrate_cir(make_series(0.5 * growth))

    def test_doubling_dt_halves_drift(self, recovery):
        series, cal = recovery
        slower = dataclasses.replace(series, dt=2.0 * series.dt)
        cal2 = calibrate_cir(slower)
        assert cal2.kappa == pytest.approx(cal.kappa / 2.0, rel=1e-15)
        assert cal2.kappa * cal2.s_bar == pytest.approx(
            cal.kappa * cal.s_bar / 2.0, rel=1e-15)
        assert cal2.s_bar == cal.s_bar
        assert cal2.a == pytest.approx(cal.a / math.sqrt(2.0), rel=1e-13)

    def test_mle_matches_ols_drift(self, recovery):
        series, ols = recovery
        mle = calibrate_cir(series, CalibrationMethod.MLE)
        n = len(series) - 1
        assert mle.kappa == ols.kappa
        assert mle.s_bar == ols.s_bar
        assert mle.a == pytest.approx(ols.a * math.sqrt((n - 2) / n), rel=1e-13)
        assert mle.method is CalibrationMethod.MLE
        assert mle.stderr["a"] < ols.stderr["a"]

    def test_stderr_entries(self, recovery):
        series, cal = recovery
        assert set(cal.stderr) == {"kappa", "s_bar", "a"}
        assert all(v > 0.0 for v in cal.stderr.values())
        assert cal.n_obs == len(series)


class TestMaxDrawdown:
    def test_monotone_increasing_is_zero(self):
        assert max_drawdown(np.linspace(1.0, 3.0, 50)) == 0.0

    def test_hand_computed(self):
        assert max_drawdown([100.0, 110.0, 99.0, 105.0]) == -0.1

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_agrees_with_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        w = 100.0 * np.exp(np.cumsum(rng.normal(0.0, 0.05, size=200)))
        best = 0.0
        for k in range(len(w)):
            for j in range(k + 1):
                best = min(best, (w[k] - w[j]) / w[j])
        assert max_drawdown(w) == pytest.approx(best, abs=1e-12)

    @given(scale=st.floats(min_value=1e-6, max_value=1e6,
                           allow_nan=False, allow_infinity=False))
    @settings(max_examples=50, deadline=None)
    def test_scale_invariance(self, scale):
        rng = np.random.default_rng(11)
        w = 50.0 * np.exp(np.cumsum(rng.normal(0.0, 0.1, size=80)))
        assert max_drawdown(scale * w) == pytest.approx(max_drawdown(w),
                                                        rel=1e-12, abs=1e-15)

    def test_single_element(self):
        assert max_drawdown([42.0]) == 0.0

    def test_total_ruin(self):
        assert max_drawdown([100.0, 0.0]) == -1.0

    def test_domain_errors(self):
        with pytest.raises(McevDomainError, match="non-empty"):
            max_drawdown([])
        with pytest.raises(McevDomainError, match="start > 0"):
            max_drawdown([0.0, 1.0])
        with pytest.raises(McevDomainError, match="stay >= 0"):
            max_drawdown([1.0, -0.5])
        with pytest.raises(McevDomainError, match="finite"):
            max_drawdown([1.0, np.nan])
        with pytest.raises(McevDomainError, match="1-d"):
            max_drawdown(np.ones((3, 3)))


class TestRunBacktest:
    def test_flat_series_zero_everything(self):
        s = make_series(np.full(12, 1.1))
        rep = run_backtest(s, reference_calibration(), REF_UTILITY,
                           X0=500.0, T=11 / 252)
        assert rep.total_return == 0.0
        assert rep.max_drawdown == 0.0
        assert rep.benchmark_return == 0.0
        assert rep.benchmark_drawdown == 0.0
        assert not rep.bankrupt
        np.testing.assert_array_equal(rep.wealth, np.full(12, 500.0))

    def test_benchmark_identity_exact(self, smoke_report):
        series, rep = smoke_report
        assert rep.benchmark_return == series.rates[-1] / series.rates[0] - 1.0

    def test_wealth_starts_at_x0_and_shapes(self, smoke_report):
        series, rep = smoke_report
        assert rep.wealth[0] == 1000.0
        assert len(rep.dates) == len(rep.wealth) == len(series)
        assert len(rep.positions) == len(rep.wealth) - 1

    def test_self_financing_identity_bitwise(self, smoke_report):
        series, rep = smoke_report
        reconstructed = rep.wealth[:-1] + rep.positions * np.diff(series.rates)
        np.testing.assert_array_equal(reconstructed, rep.wealth[1:])

    def test_bankruptcy_truncates_and_flags(self):
        s = make_series([0.20, 0.17, 0.30, 0.31, 0.32])
        aggressive = UtilityParams(gamma=0.9)
        rep = run_backtest(s, reference_calibration(), aggressive,
                           X0=1000.0, T=4 / 252)
        assert rep.bankrupt
        assert len(rep.wealth) == 2 < len(s)
        assert rep.wealth[-1] == 0.0
        assert rep.total_return == -1.0
        assert rep.max_drawdown == -1.0
        assert len(rep.positions) == 1
        # benchmark still covers the whole window
        assert rep.benchmark_return == s.rates[-1] / s.rates[0] - 1.0
        assert rep.benchmark_drawdown == pytest.approx(0.17 / 0.20 - 1.0)

    def test_myopic_dominant_regime_sign(self):
        from mcev.policy import PolicyInput, cir_optimal_position

        X, T = 1000.0, 0.05
        for S in (0.7, 1.0, 1.2, 1.5, 1.8):
            pi = cir_optimal_position(PolicyInput(X=X, S=S, t=0.0, T=T),
                                      REF_PROCESS, REF_UTILITY)
            myopic = X / S * (REF_UTILITY.delta * KAPPA_REF
                              * (SBAR_REF - S) / A_REF**2)
            hedge = pi - myopic
            assert abs(myopic) >= 10.0 * abs(hedge)  # regime precondition
            assert math.copysign(1.0, pi) == math.copysign(1.0, SBAR_REF - S)

    def test_input_validation(self):
        s = make_series([1.0, 1.1, 1.2])
        cal = reference_calibration()
        with pytest.raises(McevDomainError, match="X0"):
            run_backtest(s, cal, REF_UTILITY, X0=0.0, T=1.0)
        with pytest.raises(McevDomainError, match="T must be"):
            run_backtest(s, cal, REF_UTILITY, X0=1.0, T=-1.0)
        with pytest.raises(McevDomainError, match="shorter than"):
            run_backtest(s, cal, REF_UTILITY, X0=1.0, T=0.5 / 252)
        with pytest.raises(McevDomainError, match="at least 2"):
            run_backtest(make_series([1.0]), cal, REF_UTILITY, X0=1.0, T=1.0)

    def test_smoke_metrics_sane(self, smoke_report):
        _, rep = smoke_report
        assert not rep.bankrupt
        assert len(rep.positions) == 252
        assert -1.0 <= rep.max_drawdown <= 0.0
        assert abs(rep.total_return) < 0.5
        assert rep.benchmark_drawdown < 0.0


class TestReportExports:
    def test_report_to_dict_json_roundtrip(self, smoke_report):
        _, rep = smoke_report
        cal = reference_calibration()
        d = report_to_dict(rep, cal)
        assert set(d) == {"total_return", "max_drawdown", "benchmark_return",
                          "benchmark_drawdown", "n_days", "bankrupt", "params"}
        assert d["n_days"] == len(rep.positions)
        assert d["params"]["method"] == "ols-euler"
        assert json.loads(json.dumps(d)) == d

    def test_export_csv_layout(self, smoke_report):
        _, rep = smoke_report
        buf = io.StringIO()
        n = export_report_csv(buf, rep)
        lines = buf.getvalue().strip().splitlines()
        assert n == len(rep.dates)
        assert lines[0] == "date,wealth,position"
        assert len(lines) == len(rep.dates) + 1
        first = lines[1].split(",")
        assert first[0] == rep.dates[0].isoformat()
        assert float(first[1]) == pytest.approx(rep.wealth[0])
        assert first[2] != ""
        assert lines[-1].endswith(",")  # no position on the final row

    def test_report_invariants_enforced(self):
        s = make_series(np.full(5, 1.1))
        rep = run_backtest(s, reference_calibration(), REF_UTILITY,
                           X0=100.0, T=4 / 252)
        with pytest.raises(McevDomainError, match="one position per step"):
            dataclasses.replace(rep, positions=rep.positions[:-1])
        with pytest.raises(McevDomainError, match="max_drawdown"):
            dataclasses.replace(rep, max_drawdown=0.2)
        with pytest.raises(McevDomainError, match="wealth"):
            dataclasses.replace(rep, wealth=-rep.wealth)
