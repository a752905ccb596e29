"""Exploratory statistics: cold-region slopes, category histograms and the
Normal vs Log-Normal goodness-of-fit comparison."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov, ndtr

from .errors import AllNonPositive, DegenerateSample, InsufficientColdDays, TooSmallSample
from .ingest import HouseholdSeries

COLD_THRESHOLD_C = 15.0
MIN_KS_SAMPLE = 20

GROUP_HEATING_TYPE = "heating_type"
GROUP_BUILT_BEFORE_1990 = "built_before_1990"

HISTOGRAM_CSV_HEADER = ["category", "bin_low", "bin_high", "count"]


@dataclass
class SlopeReport:
    household_id: str
    n_cold_days: int
    slope: float            # kWh per degC on days below the threshold
    correlation: float
    heating_type: str = "unknown"
    year_built: int | None = None


@dataclass
class KsReport:
    household_id: str
    n: int
    n_nonpositive: int
    ks_stat_normal: float
    p_normal: float
    ks_stat_lognormal: float
    p_lognormal: float
    reject_normal: bool
    reject_lognormal: bool


@dataclass
class CategoryHistogram:
    group_by: str
    bin_width: float
    rows: list[tuple[str, float, float, int]]   # (category, bin_low, bin_high, count)
    stats: dict[str, dict[str, float]]          # category -> {count, mean, std}


def cold_slope(series: HouseholdSeries, threshold_c: float = COLD_THRESHOLD_C) -> SlopeReport:
    """Least-squares consumption-vs-temperature slope on cold complete days."""
    days = series.complete_days()
    temps = np.array([d.temp_c for d in days])
    cons = np.array([d.consumption_kwh for d in days])
    sel = temps < threshold_c
    n = int(sel.sum())
    if n < 2 or np.ptp(temps[sel]) == 0.0:
        raise InsufficientColdDays(
            f"household {series.meta.household_id!r}: {n} cold days below {threshold_c} degC")
    x, y = temps[sel], cons[sel]
    vx = float(np.var(x))
    cov = float(np.mean((x - x.mean()) * (y - y.mean())))
    slope = cov / vx
    sy = float(np.std(y))
    corr = 0.0 if sy == 0.0 else cov / (math.sqrt(vx) * sy)
    return SlopeReport(
        household_id=series.meta.household_id,
        n_cold_days=n,
        slope=slope,
        correlation=corr,
        heating_type=series.meta.heating_type,
        year_built=series.meta.year_built,
    )


def ks_statistic(sorted_values: np.ndarray, cdf_values: np.ndarray) -> float:
    """One-sample KS statistic from sorted data and their fitted CDF values."""
    n = sorted_values.size
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - cdf_values)
    d_minus = np.max(cdf_values - (i - 1) / n)
    return float(max(d_plus, d_minus))


def _ks_against_normal(values: np.ndarray) -> tuple[float, float]:
    """Fit (mean, std) by maximum likelihood, then KS statistic and asymptotic p."""
    mu = float(values.mean())
    sd = float(values.std())  # MLE, denominator n
    if sd == 0.0:
        raise DegenerateSample("sample has zero variance")
    x = np.sort(values)
    d = ks_statistic(x, ndtr((x - mu) / sd))
    p = float(kolmogorov(math.sqrt(x.size) * d))
    return d, p


def ks_normal_vs_lognormal(sample, alpha: float = 0.05, household_id: str = "") -> KsReport:
    """Kolmogorov-Smirnov comparison of Normal and Log-Normal fits.

    The Normal branch uses all values; the log branch uses the logs of the
    positive values (non-positive ones are excluded and counted).  P-values
    come from the asymptotic Kolmogorov distribution with sqrt(n) rescaling,
    without a parameter-estimation correction, so they are conservative.
    """
    values = np.asarray(sample, dtype=float)
    values = values[np.isfinite(values)]
    positive = values[values > 0.0]
    n_nonpos = int(values.size - positive.size)
    if positive.size == 0:
        raise AllNonPositive("no positive values for the log branch")
    if values.size < MIN_KS_SAMPLE or positive.size < MIN_KS_SAMPLE:
        raise TooSmallSample(f"need at least {MIN_KS_SAMPLE} values, got {values.size}")

    d_norm, p_norm = _ks_against_normal(values)
    d_lognorm, p_lognorm = _ks_against_normal(np.log(positive))
    return KsReport(
        household_id=household_id,
        n=int(values.size),
        n_nonpositive=n_nonpos,
        ks_stat_normal=d_norm,
        p_normal=p_norm,
        ks_stat_lognormal=d_lognorm,
        p_lognormal=p_lognorm,
        reject_normal=p_norm < alpha,
        reject_lognormal=p_lognorm < alpha,
    )


def _category_of(report: SlopeReport, group_by: str) -> str | None:
    if group_by == GROUP_HEATING_TYPE:
        return report.heating_type
    if group_by == GROUP_BUILT_BEFORE_1990:
        if report.year_built is None:
            return None
        return "before_1990" if report.year_built < 1990 else "after_1990"
    raise ValueError(f"unknown grouping {group_by!r}")


def category_histogram(reports: list[SlopeReport], group_by: str,
                       bin_width: float) -> CategoryHistogram:
    """Slope histogram per category with bins aligned at zero."""
    if not reports:
        raise ValueError("no slope reports to histogram")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")

    groups: dict[str, list[float]] = {}
    for r in reports:
        cat = _category_of(r, group_by)
        if cat is not None:
            groups.setdefault(cat, []).append(r.slope)

    rows: list[tuple[str, float, float, int]] = []
    stats: dict[str, dict[str, float]] = {}
    for cat in sorted(groups):
        slopes = np.array(groups[cat])
        idx = np.floor(slopes / bin_width).astype(int)
        for i in range(idx.min(), idx.max() + 1):
            rows.append((cat, i * bin_width, (i + 1) * bin_width, int(np.sum(idx == i))))
        stats[cat] = {
            "count": int(slopes.size),
            "mean": float(slopes.mean()),
            "std": float(slopes.std(ddof=1)) if slopes.size > 1 else 0.0,
        }
    return CategoryHistogram(group_by=group_by, bin_width=bin_width, rows=rows, stats=stats)


def slope_reports_to_csv(reports: list[SlopeReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["household_id", "n_cold_days", "slope", "correlation", "heating_type", "year_built"])
    for r in reports:
        w.writerow([r.household_id, r.n_cold_days, r.slope, r.correlation,
                    r.heating_type, "" if r.year_built is None else r.year_built])
    return buf.getvalue()


def ks_reports_to_csv(reports: list[KsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["household_id", "n", "n_nonpositive", "ks_stat_normal", "p_normal",
                "ks_stat_lognormal", "p_lognormal", "reject_normal", "reject_lognormal"])
    for r in reports:
        w.writerow([r.household_id, r.n, r.n_nonpositive, r.ks_stat_normal, r.p_normal,
                    r.ks_stat_lognormal, r.p_lognormal, r.reject_normal, r.reject_lognormal])
    return buf.getvalue()


def histogram_to_csv(hist: CategoryHistogram) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTOGRAM_CSV_HEADER)
    for cat, lo, hi, count in hist.rows:
        w.writerow([cat, lo, hi, count])
    return buf.getvalue()
