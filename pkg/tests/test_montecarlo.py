"""Tests for the Monte Carlo engine.

Statistical assertions are pinned to fixed seeds, so they are deterministic;
tolerances are expressed in Monte Carlo standard errors of the pinned run.
"""

import csv
import io
import json
import math

import numpy as np
import pytest

from mcev._errors import McevDomainError
from mcev.model import MCEVParams, UtilityParams
from mcev.policy import CIRParams
from mcev.montecarlo import (
    LEVERAGE_CAP,
    PathSet,
    Scheme,
    SimConfig,
    StrategyKind,
    StrategySpec,
    TerminalStats,
    WealthPath,
    export_paths_csv,
    misspecification_study,
    run_strategy,
    simulate_cir,
    simulate_mcev,
    stats_to_dict,
    terminal_stats,
)

REF_MODEL = MCEVParams(a=0.4, beta=-0.4, c=0.8, alpha=0.045, r=0.04)
REF_UTIL = UtilityParams(gamma=-4.0)
CIR_REF = CIRParams(kappa=0.1090, s_bar=1.32675, a=0.28789)

#: parameters with a substantial absorption probability (deep default zone)
HARSH_MODEL = MCEVParams(a=0.9, beta=-0.8, c=0.1, alpha=0.02, r=0.0)


@pytest.fixture(scope="module")
def ref_paths():
    cfg = SimConfig(n_paths=100_000, n_steps=252, seed=7)
    return simulate_mcev(REF_MODEL, 100.0, 1.0, cfg)


def _stub_path(x_t: float, x0: float = 100.0, failed: bool = False) -> WealthPath:
    return WealthPath(
        times=np.array([0.0, 1.0]),
        wealth=np.array([x0, x_t]),
        positions=np.zeros(1),
        failed=failed,
    )


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------


class TestSimConfig:
    def test_valid(self):
        cfg = SimConfig(n_paths=10, n_steps=20, seed=0)
        assert cfg.scheme is Scheme.EULER

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(n_paths=0, n_steps=10, seed=1),
            dict(n_paths=10, n_steps=0, seed=1),
            dict(n_paths=10, n_steps=10, seed=-1),
            dict(n_paths=2.5, n_steps=10, seed=1),
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(McevDomainError):
            SimConfig(**kwargs)

    def test_memory_budget(self):
        with pytest.raises(McevDomainError, match="memory budget"):
            SimConfig(n_paths=1_000_000, n_steps=1_000, seed=1)

    def test_memory_budget_env_override(self, monkeypatch):
        monkeypatch.setenv("MCEV_MC_BUDGET", "100")
        with pytest.raises(McevDomainError, match="memory budget"):
            SimConfig(n_paths=10, n_steps=100, seed=1)
        monkeypatch.setenv("MCEV_MC_BUDGET", "banana")
        with pytest.raises(McevDomainError, match="MCEV_MC_BUDGET"):
            SimConfig(n_paths=2, n_steps=2, seed=1)

    def test_from_config(self):
        cfg = SimConfig.from_config(
            {"n_paths": 5, "n_steps": 10, "seed": 3, "scheme": "milstein"}
        )
        assert cfg.scheme is Scheme.MILSTEIN
        with pytest.raises(McevDomainError):
            SimConfig.from_config({"n_paths": 5, "n_steps": 10})


class TestStrategySpec:
    def test_constant_fraction_requires_fraction(self):
        with pytest.raises(McevDomainError):
            StrategySpec(kind=StrategyKind.CONSTANT_FRACTION)
        with pytest.raises(McevDomainError):
            StrategySpec(kind=StrategyKind.CONSTANT_FRACTION, fraction=math.inf)
        spec = StrategySpec(kind=StrategyKind.CONSTANT_FRACTION, fraction=0.5)
        assert spec.fraction == 0.5

    def test_other_kinds_reject_fraction(self):
        with pytest.raises(McevDomainError):
            StrategySpec(kind=StrategyKind.BOND_ONLY, fraction=0.5)

    def test_kind_coercion(self):
        assert StrategySpec(kind="asset_only").kind is StrategyKind.ASSET_ONLY


# ---------------------------------------------------------------------------
# price simulation
# ---------------------------------------------------------------------------


class TestSimulateMCEV:
    def test_deterministic_small_noise_limit(self):
        # a -> 0 collapses the SDE onto dS/S = alpha dt
        m = MCEVParams(a=1e-8, beta=-0.4, c=0.8, alpha=0.045, r=0.04)
        p = simulate_mcev(m, 100.0, 1.0, SimConfig(n_paths=4, n_steps=10_000, seed=1))
        expected = 100.0 * math.exp(0.045)
        assert p.values[:, -1] == pytest.approx(expected, rel=1e-4)

    def test_driftless_martingale(self):
        m = MCEVParams(a=0.4, beta=-0.4, c=0.0, alpha=0.0, r=0.0)
        p = simulate_mcev(m, 100.0, 1.0, SimConfig(n_paths=100_000, n_steps=252, seed=7))
        s_t = p.values[:, -1]
        se = s_t.std(ddof=1) / math.sqrt(s_t.size)
        assert abs(s_t.mean() - 100.0) <= 3.0 * se

    def test_initial_column_and_grid(self, ref_paths):
        assert np.all(ref_paths.values[:, 0] == 100.0)
        assert ref_paths.times[0] == 0.0 and ref_paths.times[-1] == 1.0
        assert ref_paths.times.size == ref_paths.n_steps + 1

    def test_absorption_deterministic_and_permanent(self):
        cfg = SimConfig(n_paths=4_000, n_steps=400, seed=5)
        p1 = simulate_mcev(HARSH_MODEL, 1.5, 5.0, cfg)
        p2 = simulate_mcev(HARSH_MODEL, 1.5, 5.0, cfg)
        assert np.array_equal(p1.values, p2.values)
        assert np.array_equal(p1.absorbed, p2.absorbed)
        frac = p1.absorbed.mean()
        assert 0.05 < frac < 0.95  # genuinely exercised
        # absorbed paths are zero from the first zero onward
        for k in np.nonzero(p1.absorbed)[0]:
            row = p1.values[k]
            j = int(np.argmax(row == 0.0))
            assert np.all(row[j:] == 0.0)
        # and values never go negative anywhere
        assert np.all(p1.values >= 0.0)

    def test_different_seed_changes_paths(self):
        cfg1 = SimConfig(n_paths=50, n_steps=50, seed=1)
        cfg2 = SimConfig(n_paths=50, n_steps=50, seed=2)
        p1 = simulate_mcev(REF_MODEL, 100.0, 1.0, cfg1)
        p2 = simulate_mcev(REF_MODEL, 100.0, 1.0, cfg2)
        assert not np.array_equal(p1.values, p2.values)

    def test_per_path_streams_are_splittable(self):
        # path k depends only on (seed, k), not on how many paths are drawn
        big = simulate_mcev(REF_MODEL, 100.0, 1.0, SimConfig(n_paths=40, n_steps=30, seed=9))
        small = simulate_mcev(REF_MODEL, 100.0, 1.0, SimConfig(n_paths=8, n_steps=30, seed=9))
        assert np.array_equal(big.values[:8], small.values)

    def test_milstein_differs_but_agrees_weakly(self):
        cfg_e = SimConfig(n_paths=20_000, n_steps=100, seed=3, scheme=Scheme.EULER)
        cfg_m = SimConfig(n_paths=20_000, n_steps=100, seed=3, scheme=Scheme.MILSTEIN)
        pe = simulate_mcev(REF_MODEL, 100.0, 1.0, cfg_e)
        pm = simulate_mcev(REF_MODEL, 100.0, 1.0, cfg_m)
        assert not np.array_equal(pe.values, pm.values)
        se = pe.values[:, -1].std(ddof=1) / math.sqrt(20_000)
        assert abs(pe.values[:, -1].mean() - pm.values[:, -1].mean()) < 3.0 * se

    def test_domain_errors(self):
        cfg = SimConfig(n_paths=2, n_steps=2, seed=1)
        with pytest.raises(McevDomainError):
            simulate_mcev(REF_MODEL, 0.0, 1.0, cfg)
        with pytest.raises(McevDomainError):
            simulate_mcev(REF_MODEL, 100.0, 0.0, cfg)

    def test_coarse_grid_warns(self):
        m = MCEVParams(a=0.4, beta=0.3, c=0.0, alpha=0.02, r=0.0)
        with pytest.warns(RuntimeWarning, match="stability"):
            simulate_mcev(m, 100.0, 1.0, SimConfig(n_paths=2, n_steps=50, seed=1))


@pytest.fixture(scope="module")
def cir_paths():
    cfg = SimConfig(n_paths=100_000, n_steps=252, seed=7)
    return simulate_cir(CIR_REF, 1.30, 0.9961, cfg)


class TestSimulateCIR:
    def test_exact_mean(self, cir_paths):
        k, sb, T, S0 = CIR_REF.kappa, CIR_REF.s_bar, 0.9961, 1.30
        s_t = cir_paths.values[:, -1]
        exact = sb + (S0 - sb) * math.exp(-k * T)
        se = s_t.std(ddof=1) / math.sqrt(s_t.size)
        assert abs(s_t.mean() - exact) <= 3.0 * se

    def test_exact_variance(self, cir_paths):
        k, sb, a, T, S0 = CIR_REF.kappa, CIR_REF.s_bar, CIR_REF.a, 0.9961, 1.30
        s_t = cir_paths.values[:, -1]
        exact = (S0 * a**2 / k * (math.exp(-k * T) - math.exp(-2.0 * k * T))
                 + sb * a**2 / (2.0 * k) * (1.0 - math.exp(-k * T)) ** 2)
        sq_dev = (s_t - s_t.mean()) ** 2
        se_var = sq_dev.std(ddof=1) / math.sqrt(s_t.size)
        assert abs(s_t.var(ddof=1) - exact) <= 5.0 * se_var

    def test_strong_reversion_pins_mean(self):
        c = CIRParams(kappa=20.0, s_bar=1.32675, a=0.28789)
        p = simulate_cir(c, 1.30, 1.0, SimConfig(n_paths=20_000, n_steps=500, seed=3))
        s_t = p.values[:, -1]
        se = s_t.std(ddof=1) / math.sqrt(s_t.size)
        assert abs(s_t.mean() - c.s_bar) <= 3.0 * se

    def test_nonnegative_and_not_absorbed(self, cir_paths):
        assert np.all(cir_paths.values >= 0.0)
        assert not cir_paths.absorbed.any()

    def test_deterministic(self):
        cfg = SimConfig(n_paths=100, n_steps=50, seed=11)
        p1 = simulate_cir(CIR_REF, 1.3, 1.0, cfg)
        p2 = simulate_cir(CIR_REF, 1.3, 1.0, cfg)
        assert np.array_equal(p1.values, p2.values)


# ---------------------------------------------------------------------------
# strategies and wealth
# ---------------------------------------------------------------------------


class TestRunStrategy:
    def test_bond_only_compounds(self):
        cfg = SimConfig(n_paths=2, n_steps=10_000, seed=1)
        paths = simulate_mcev(REF_MODEL, 100.0, 1.0, cfg)
        wp = run_strategy(paths, StrategySpec(kind=StrategyKind.BOND_ONLY),
                          REF_MODEL, REF_UTIL, 100.0, 1.0)
        expected = 100.0 * math.exp(0.04)
        for w in wp:
            assert w.wealth[0] == 100.0
            assert np.all(w.positions == 0.0)
            assert w.wealth[-1] == pytest.approx(expected, abs=1e-4)

    def test_asset_only_tracks_price(self):
        m = MCEVParams(a=0.4, beta=-0.4, c=0.8, alpha=0.045, r=0.0)
        cfg = SimConfig(n_paths=200, n_steps=252, seed=2)
        paths = simulate_mcev(m, 100.0, 1.0, cfg)
        wp = run_strategy(paths, StrategySpec(kind=StrategyKind.ASSET_ONLY),
                          m, REF_UTIL, 50.0, 1.0)
        for k, w in enumerate(wp):
            assert w.wealth[-1] / 50.0 == pytest.approx(
                paths.values[k, -1] / 100.0, rel=1e-9, abs=1e-12
            )

    def test_asset_only_absorption_ruins(self):
        cfg = SimConfig(n_paths=500, n_steps=200, seed=5)
        paths = simulate_mcev(HARSH_MODEL, 1.5, 5.0, cfg)
        assert paths.absorbed.any()
        wp = run_strategy(paths, StrategySpec(kind=StrategyKind.ASSET_ONLY),
                          HARSH_MODEL, REF_UTIL, 10.0, 5.0)
        for k in np.nonzero(paths.absorbed)[0]:
            assert wp[k].wealth[-1] == 0.0
            assert not wp[k].failed

    def test_constant_fraction_one_is_asset_only(self):
        cfg = SimConfig(n_paths=100, n_steps=100, seed=4)
        paths = simulate_mcev(REF_MODEL, 100.0, 1.0, cfg)
        wa = run_strategy(paths, StrategySpec(kind=StrategyKind.ASSET_ONLY),
                          REF_MODEL, REF_UTIL, 100.0, 1.0)
        wc = run_strategy(paths, StrategySpec(kind=StrategyKind.CONSTANT_FRACTION,
                                              fraction=1.0),
                          REF_MODEL, REF_UTIL, 100.0, 1.0)
        for a, c in zip(wa, wc):
            assert np.array_equal(a.wealth, c.wealth)

    def test_self_financing_identity(self, ref_paths):
        # every recorded step decomposes exactly into accrual + gain
        cfg = SimConfig(n_paths=100, n_steps=252, seed=8)
        paths = simulate_mcev(REF_MODEL, 100.0, 1.0, cfg)
        wp = run_strategy(paths, StrategySpec(kind=StrategyKind.OPTIMAL_POLICY),
                          REF_MODEL, REF_UTIL, 100.0, 1.0)
        dt = paths.times[1] - paths.times[0]
        for k, w in enumerate(wp):
            s_row = paths.values[k]
            for j in (0, 63, 127, 251):
                lhs = w.wealth[j + 1]
                rhs = (w.wealth[j]
                       + REF_MODEL.r * (w.wealth[j] - w.positions[j] * s_row[j]) * dt
                       + w.positions[j] * (s_row[j + 1] - s_row[j]))
                assert lhs == rhs

    def test_optimal_beats_static_strategies(self, ref_paths):
        g = REF_UTIL.gamma
        outs = {}
        for kind in (StrategyKind.OPTIMAL_POLICY, StrategyKind.BOND_ONLY,
                     StrategyKind.ASSET_ONLY):
            wp = run_strategy(ref_paths, StrategySpec(kind=kind),
                              REF_MODEL, REF_UTIL, 100.0, 1.0)
            x = np.array([w.wealth[-1] for w in wp])
            with np.errstate(divide="ignore"):
                outs[kind] = x**g / g
        for static in (StrategyKind.BOND_ONLY, StrategyKind.ASSET_ONLY):
            diff = outs[StrategyKind.OPTIMAL_POLICY] - outs[static]
            finite = np.isfinite(diff)
            d = diff[finite]
            se = d.std(ddof=1) / math.sqrt(d.size)
            assert d.mean() >= -3.0 * se  # paired comparison on common paths

    def test_leverage_cap_flags(self):
        cfg = SimConfig(n_paths=20, n_steps=20, seed=6)
        paths = simulate_mcev(REF_MODEL, 100.0, 1.0, cfg)
        wp = run_strategy(
            paths,
            StrategySpec(kind=StrategyKind.CONSTANT_FRACTION, fraction=5e6),
            REF_MODEL, REF_UTIL, 100.0, 1.0,
        )
        assert all(w.leverage_capped for w in wp)
        for k, w in enumerate(wp):
            exposure = abs(w.positions[0]) * paths.values[k, 0] / w.wealth[0]
            assert exposure <= LEVERAGE_CAP * (1.0 + 1e-12)

    def test_ruinous_leverage_flags_failed(self):
        cfg = SimConfig(n_paths=300, n_steps=252, seed=9)
        paths = simulate_mcev(REF_MODEL, 100.0, 1.0, cfg)
        wp = run_strategy(
            paths,
            StrategySpec(kind=StrategyKind.CONSTANT_FRACTION, fraction=80.0),
            REF_MODEL, REF_UTIL, 100.0, 1.0,
        )
        n_failed = sum(w.failed for w in wp)
        assert 0 < n_failed < len(wp)
        with pytest.warns(RuntimeWarning, match="excluded"):
            stats = terminal_stats(wp, REF_UTIL)
        assert stats.n_excluded == n_failed

    def test_input_validation(self, ref_paths):
        spec = StrategySpec(kind=StrategyKind.BOND_ONLY)
        with pytest.raises(McevDomainError):
            run_strategy(ref_paths, spec, REF_MODEL, REF_UTIL, 0.0, 1.0)
        with pytest.raises(McevDomainError):
            run_strategy(ref_paths, spec, REF_MODEL, REF_UTIL, 100.0, 2.0)

    def test_scheme_halving_moves_mean_within_noise(self, ref_paths):
        spec = StrategySpec(kind=StrategyKind.OPTIMAL_POLICY)
        wp_fine = run_strategy(ref_paths, spec, REF_MODEL, REF_UTIL, 100.0, 1.0)
        coarse = simulate_mcev(REF_MODEL, 100.0, 1.0,
                               SimConfig(n_paths=100_000, n_steps=126, seed=7))
        wp_coarse = run_strategy(coarse, spec, REF_MODEL, REF_UTIL, 100.0, 1.0)
        xf = np.array([w.wealth[-1] for w in wp_fine])
        xc = np.array([w.wealth[-1] for w in wp_coarse])
        se = math.sqrt(xf.var(ddof=1) / xf.size + xc.var(ddof=1) / xc.size)
        assert abs(xf.mean() - xc.mean()) <= 2.0 * se


# ---------------------------------------------------------------------------
# terminal statistics
# ---------------------------------------------------------------------------


class TestTerminalStats:
    def test_constant_wealth(self):
        stats = terminal_stats([_stub_path(104.0) for _ in range(5)], REF_UTIL)
        assert stats.std == 0.0
        assert stats.certainty_equivalent == pytest.approx(104.0, rel=1e-12)
        assert all(q == pytest.approx(104.0) for q in stats.quantiles.values())

    def test_two_point_harmonic_mean(self):
        u = UtilityParams(gamma=-1.0)
        stats = terminal_stats([_stub_path(1.0), _stub_path(3.0)], u)
        assert stats.certainty_equivalent == pytest.approx(1.5, rel=1e-12)

    def test_lognormal_quantiles(self):
        rng = np.random.default_rng(5)
        mu, sigma = 0.1, 0.25
        xs = np.exp(mu + sigma * rng.standard_normal(100_000))
        stats = terminal_stats([_stub_path(float(x)) for x in xs], REF_UTIL)
        from scipy.stats import norm

        for name, lvl in (("1%", 0.01), ("5%", 0.05), ("50%", 0.50),
                          ("95%", 0.95), ("99%", 0.99)):
            exact = math.exp(mu + sigma * norm.ppf(lvl))
            assert stats.quantiles[name] == pytest.approx(exact, rel=0.01)

    def test_quantiles_monotone(self, ref_paths):
        wp = run_strategy(ref_paths, StrategySpec(kind=StrategyKind.ASSET_ONLY),
                          REF_MODEL, REF_UTIL, 100.0, 1.0)
        stats = terminal_stats(wp, REF_UTIL)
        qs = list(stats.quantiles.values())
        assert all(a <= b for a, b in zip(qs, qs[1:]))

    def test_ruin_drives_ce_to_zero(self):
        stats = terminal_stats([_stub_path(0.0), _stub_path(100.0)], REF_UTIL)
        assert stats.certainty_equivalent == 0.0

    def test_empty_and_all_failed_raise(self):
        with pytest.raises(McevDomainError):
            terminal_stats([], REF_UTIL)
        with pytest.raises(McevDomainError):
            terminal_stats([_stub_path(10.0, failed=True)], REF_UTIL)


# ---------------------------------------------------------------------------
# misspecification study
# ---------------------------------------------------------------------------


def _perturbed(field: str, rel: float) -> MCEVParams:
    kw = dict(a=REF_MODEL.a, beta=REF_MODEL.beta, c=REF_MODEL.c,
              alpha=REF_MODEL.alpha, r=REF_MODEL.r)
    kw[field] = kw[field] * (1.0 + rel)
    return MCEVParams(**kw)


@pytest.fixture(scope="module")
def losses():
    cfg = SimConfig(n_paths=20_000, n_steps=252, seed=11)
    out = {}
    for field in ("alpha", "a", "beta", "c"):
        worst = 0.0
        for rel in (+0.2, -0.2):
            ms, tr = misspecification_study(
                REF_MODEL, _perturbed(field, rel), REF_UTIL,
                100.0, 100.0, 1.0, cfg,
            )
            worst = max(worst, tr.certainty_equivalent - ms.certainty_equivalent)
        out[field] = worst
    return out


class TestMisspecification:
    def test_identity_scenario(self):
        cfg = SimConfig(n_paths=500, n_steps=64, seed=13)
        ms, tr = misspecification_study(REF_MODEL, REF_MODEL, REF_UTIL,
                                        100.0, 100.0, 1.0, cfg)
        assert ms == tr  # same seed, same policy -> identical statistics

    def test_return_errors_dominate_volatility_errors(self, losses):
        assert losses["alpha"] > losses["a"]

    def test_elasticity_errors_dominate_intensity_errors(self, losses):
        assert losses["beta"] > losses["c"]

    def test_losses_nonnegative(self, losses):
        for v in losses.values():
            assert v >= 0.0


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


class TestExport:
    def test_stats_round_trip_json(self):
        stats = terminal_stats([_stub_path(95.0), _stub_path(105.0)], REF_UTIL)
        doc = json.loads(json.dumps(stats_to_dict(stats)))
        assert doc["mean"] == pytest.approx(100.0)
        assert set(doc["quantiles"]) == {"1%", "5%", "50%", "95%", "99%"}

    def test_csv_layout(self):
        cfg = SimConfig(n_paths=3, n_steps=4, seed=1)
        paths = simulate_mcev(REF_MODEL, 100.0, 1.0, cfg)
        wp = run_strategy(paths, StrategySpec(kind=StrategyKind.ASSET_ONLY),
                          REF_MODEL, REF_UTIL, 100.0, 1.0)
        buf = io.StringIO()
        n = export_paths_csv(buf, paths, wp, max_paths=2)
        assert n == 2
        rows = list(csv.reader(io.StringIO(buf.getvalue())))
        assert rows[0] == ["path_id", "t", "S", "X", "pi"]
        assert len(rows) == 1 + 2 * 5  # header + 2 paths x (n_steps + 1)
        assert float(rows[1][2]) == 100.0 and float(rows[1][3]) == 100.0
        assert rows[5][4] == ""  # no rebalance on the terminal row
        assert rows[5][0] == "0" and rows[6][0] == "1"

    def test_csv_without_wealth(self):
        cfg = SimConfig(n_paths=2, n_steps=2, seed=1)
        paths = simulate_mcev(REF_MODEL, 100.0, 1.0, cfg)
        buf = io.StringIO()
        export_paths_csv(buf, paths)
        rows = list(csv.reader(io.StringIO(buf.getvalue())))
        assert rows[1][3] == "" and rows[1][4] == ""


class TestPathSetInvariants:
    def test_shape_validation(self):
        with pytest.raises(McevDomainError):
            PathSet(times=np.zeros(3), values=np.zeros((2, 4)),
                    absorbed=np.zeros(2, dtype=bool))
        with pytest.raises(McevDomainError):
            PathSet(times=np.zeros(3), values=np.zeros((2, 3)),
                    absorbed=np.zeros(5, dtype=bool))

    def test_quantile_monotonicity_enforced(self):
        with pytest.raises(McevDomainError):
            TerminalStats(mean=1.0, std=0.0,
                          quantiles={"1%": 2.0, "5%": 1.0},
                          certainty_equivalent=1.0)
