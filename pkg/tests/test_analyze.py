import random

import numpy as np
import pytest
from scipy.special import ndtr

from heatsplit.analyze import (
    GROUP_BUILT_BEFORE_1990, GROUP_HEATING_TYPE, SlopeReport, category_histogram,
    cold_slope, ks_normal_vs_lognormal, ks_statistic,
)
from heatsplit.errors import AllNonPositive, InsufficientColdDays, TooSmallSample
from heatsplit.model import simulate
from tests.conftest import make_series, reference_params


class TestColdSlope:
    def test_exact_line(self):
        temps = np.linspace(-2, 14, 30)
        cons = -0.5 * temps + 20.0
        report = cold_slope(make_series(cons, temps))
        assert report.slope == pytest.approx(-0.5, abs=1e-12)
        assert report.correlation == pytest.approx(-1.0, abs=1e-12)
        assert report.n_cold_days == 30

    def test_flat_response(self):
        temps = np.linspace(-2, 14, 30)
        report = cold_slope(make_series(np.full(30, 12.0), temps))
        assert report.slope == pytest.approx(0.0, abs=1e-12)
        assert report.correlation == 0.0

    def test_warm_days_ignored(self):
        temps = np.concatenate([np.linspace(-2, 14, 30), np.linspace(16, 30, 20)])
        cons = np.concatenate([-0.5 * np.linspace(-2, 14, 30) + 20, np.full(20, 99.0)])
        report = cold_slope(make_series(cons, temps))
        assert report.slope == pytest.approx(-0.5, abs=1e-12)
        assert report.n_cold_days == 30

    def test_row_order_invariant(self):
        rng = np.random.default_rng(0)
        temps = rng.uniform(-3, 25, 100)
        cons = 18 - 0.4 * temps + rng.normal(0, 1, 100)
        order = list(range(100))
        random.Random(1).shuffle(order)
        a = cold_slope(make_series(cons, temps))
        b = cold_slope(make_series(cons[order], temps[order]))
        assert a.slope == pytest.approx(b.slope, rel=1e-12)

    def test_insufficient_cold_days(self):
        with pytest.raises(InsufficientColdDays):
            cold_slope(make_series([10.0, 11.0], temps=[20.0, 25.0]))
        with pytest.raises(InsufficientColdDays):
            cold_slope(make_series([10.0, 11.0], temps=[5.0, 5.0]))

    def test_electric_vs_no_heating_contrast(self):
        electric = simulate(reference_params(), 365, seed=0)
        flat = simulate(reference_params(slopes_left=(-0.04, -0.02), slope_right=0.0),
                        365, seed=0, household_id="synthetic-gas")
        slope_e = cold_slope(electric.series).slope
        slope_g = cold_slope(flat.series).slope
        assert slope_e < -0.1
        assert abs(slope_g) < 0.05


class TestKsStatistic:
    def test_uniform_spacing_bound(self):
        for n in (10, 50, 400):
            x = np.linspace(0, 1, n)  # placeholder positions; the cdf values matter
            u = (np.arange(1, n + 1) - 0.5) / n
            assert ks_statistic(x, u) == pytest.approx(0.5 / n, abs=1e-15)

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = np.sort(rng.normal(0, 1, int(rng.integers(5, 60))))
            u = ndtr(x)
            n = x.size
            best = 0.0
            for i in range(1, n + 1):  # direct enumeration of both sup-differences
                best = max(best, abs(i / n - u[i - 1]), abs(u[i - 1] - (i - 1) / n))
            assert ks_statistic(x, u) == pytest.approx(best, abs=1e-15)


class TestKsNormalVsLognormal:
    def test_lognormal_sample_prefers_lognormal(self):
        hits_reject_normal = 0
        hits_keep_lognormal = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            sample = rng.lognormal(0.0, 0.5, 2000)
            rep = ks_normal_vs_lognormal(sample)
            hits_reject_normal += rep.reject_normal
            hits_keep_lognormal += not rep.reject_lognormal
        assert hits_reject_normal >= 19
        assert hits_keep_lognormal >= 19

    def test_normal_sample_retained(self):
        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            sample = rng.normal(10.0, 1.0, 2000)
            rep = ks_normal_vs_lognormal(sample)
            hits += not rep.reject_normal
        assert hits >= 19

    def test_statistics_and_pvalues_in_range(self):
        rng = np.random.default_rng(5)
        rep = ks_normal_vs_lognormal(rng.lognormal(0, 0.4, 500))
        for v in (rep.ks_stat_normal, rep.ks_stat_lognormal, rep.p_normal, rep.p_lognormal):
            assert 0.0 <= v <= 1.0

    def test_nonpositive_excluded_with_count(self):
        rng = np.random.default_rng(2)
        sample = np.concatenate([rng.lognormal(0, 0.5, 100), [-1.0, 0.0]])
        rep = ks_normal_vs_lognormal(sample)
        assert rep.n == 102
        assert rep.n_nonpositive == 2

    def test_too_small(self):
        with pytest.raises(TooSmallSample):
            ks_normal_vs_lognormal(np.ones(10) + np.arange(10) * 0.1)

    def test_all_nonpositive(self):
        with pytest.raises(AllNonPositive):
            ks_normal_vs_lognormal(np.full(30, -1.0))


def report(hid, slope, heating="electric", year=None):
    return SlopeReport(household_id=hid, n_cold_days=50, slope=slope,
                       correlation=-0.5, heating_type=heating, year_built=year)


class TestCategoryHistogram:
    def test_point_mass_single_bin(self):
        reports = [report(f"h{i}", 0.0) for i in range(5)]
        hist = category_histogram(reports, GROUP_HEATING_TYPE, 0.1)
        assert len(hist.rows) == 1
        assert hist.rows[0][3] == 5

    def test_disjoint_categories_disjoint_bins(self):
        reports = ([report(f"e{i}", -1.0 - 0.1 * i, "electric") for i in range(4)]
                   + [report(f"g{i}", 0.01 * i, "gas") for i in range(4)])
        hist = category_histogram(reports, GROUP_HEATING_TYPE, 0.1)
        electric_bins = {(r[1], r[2]) for r in hist.rows if r[0] == "electric" and r[3] > 0}
        gas_bins = {(r[1], r[2]) for r in hist.rows if r[0] == "gas" and r[3] > 0}
        assert electric_bins.isdisjoint(gas_bins)

    def test_counts_sum_to_category_sizes(self):
        rng = np.random.default_rng(3)
        reports = [report(f"h{i}", float(rng.normal(-0.3, 0.2)),
                          "electric" if i % 3 else "gas") for i in range(30)]
        hist = category_histogram(reports, GROUP_HEATING_TYPE, 0.05)
        for cat in ("electric", "gas"):
            total = sum(r[3] for r in hist.rows if r[0] == cat)
            assert total == hist.stats[cat]["count"]

    def test_bins_aligned_at_zero(self):
        hist = category_histogram([report("h", -0.07)], GROUP_HEATING_TYPE, 0.05)
        lo, hi = hist.rows[0][1], hist.rows[0][2]
        assert lo == pytest.approx(-0.1) and hi == pytest.approx(-0.05)

    def test_missing_year_excluded_from_built_grouping(self):
        reports = [report("a", -0.5, year=1970), report("b", -0.1, year=2000),
                   report("c", -0.2, year=None)]
        hist = category_histogram(reports, GROUP_BUILT_BEFORE_1990, 0.1)
        assert set(hist.stats) == {"before_1990", "after_1990"}
        assert hist.stats["before_1990"]["count"] == 1

    def test_older_cohort_steeper_and_wider(self):
        # simulated cohorts: pre-1990 (steeper response) vs post-1990
        old, new = [], []
        for i in range(12):
            syn_old = simulate(reference_params(slopes_left=(-3.0 - 0.2 * (i % 4), -0.8)),
                               365, seed=i, household_id=f"old{i}")
            syn_new = simulate(reference_params(slopes_left=(-1.2 - 0.05 * (i % 4), -0.3)),
                               365, seed=100 + i, household_id=f"new{i}")
            old.append(cold_slope(syn_old.series))
            new.append(cold_slope(syn_new.series))
        for r in old:
            r.year_built = 1975
        for r in new:
            r.year_built = 2005
        hist = category_histogram(old + new, GROUP_BUILT_BEFORE_1990, 0.05)
        assert hist.stats["before_1990"]["mean"] < hist.stats["after_1990"]["mean"]
        assert hist.stats["before_1990"]["std"] > hist.stats["after_1990"]["std"]
