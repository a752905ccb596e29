"""Temporal A/B validation of the heating disaggregation.

Each household is split at mid-January; the full-data fit's heating estimate
on the post-split days serves as ground truth for the estimate produced by a
model trained on the pre-split days alone.  Agreement is scored by the
relative root mean squared error, skipping days whose ground-truth heating is
near zero.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import date as _date

import numpy as np

from . import disagg, infer
from .errors import AllExcluded, AllFailed, EmptySide, HeatsplitError, TooFewObservations
from .ingest import HouseholdSeries
from .model import ModelPriors

NEAR_ZERO_KWH = 0.05
MIN_DAYS_FOR_COHORT_STATS = 10

VALIDATION_CSV_HEADER = ["household_id", "n_days", "delta"]


@dataclass
class HouseholdValidation:
    household_id: str
    n_days: int      # pairs retained by the near-zero filter
    delta: float     # relative RMSE of predicted vs ground-truth heating


@dataclass
class ValidationReport:
    rows: list[HouseholdValidation]
    failures: list[tuple[str, str]]
    mean_delta: float
    std_delta: float
    split_date: _date


def default_split_date(series: HouseholdSeries) -> _date:
    """January 15 of the latest heating season covered by the series."""
    first, last = series.days[0].date, series.days[-1].date
    candidates = [d for d in (_date(y, 1, 15) for y in range(first.year, last.year + 1))
                  if first < d <= last]
    if not candidates:
        raise EmptySide(f"no January 15 inside [{first}..{last}]")
    return candidates[-1]


def split_ab(series: HouseholdSeries,
             split_date: _date | None = None) -> tuple[HouseholdSeries, HouseholdSeries]:
    """Partition into days strictly before the split date and the rest."""
    if not series.days:
        raise EmptySide("series has no days")
    if split_date is None:
        split_date = default_split_date(series)
    a = [d for d in series.days if d.date < split_date]
    b = [d for d in series.days if d.date >= split_date]
    if not a or not b:
        raise EmptySide(f"split at {split_date} leaves an empty side")
    return (HouseholdSeries(series.meta, series.station_id, a),
            HouseholdSeries(series.meta, series.station_id, b))


def relative_rmse(truth, pred, near_zero: float = NEAR_ZERO_KWH) -> float:
    """Root mean squared relative deviation over pairs with non-trivial truth."""
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape or truth.size == 0:
        raise ValueError("truth and pred must be equal-length, non-empty")
    keep = np.abs(truth) >= near_zero
    if not keep.any():
        raise AllExcluded(f"all {truth.size} pairs below {near_zero} kWh")
    rel = (truth[keep] - pred[keep]) / truth[keep]
    return float(np.sqrt(np.mean(rel**2)))


def validate_household(series: HouseholdSeries, priors: ModelPriors | None = None,
                       config: infer.FitConfig | None = None,
                       split_date: _date | None = None,
                       min_complete_days: int = 180) -> HouseholdValidation:
    """Fit on all days and on pre-split days, compare clipped heating on the rest.

    Both fits share the seed from ``config``; both sides must satisfy the
    reference completeness minimum.
    """
    a, b = split_ab(series, split_date)
    if len(a.complete_days()) < min_complete_days:
        raise TooFewObservations(
            f"pre-split side has {len(a.complete_days())} complete days < {min_complete_days}")
    if len(series.complete_days()) < min_complete_days:
        raise TooFewObservations(
            f"series has {len(series.complete_days())} complete days < {min_complete_days}")

    fit_full = infer.fit(series, priors, config)
    fit_pre = infer.fit(a, priors, config)
    rows_truth = disagg.disaggregate_series(b, fit_full)
    rows_pred = disagg.disaggregate_series(b, fit_pre)

    truth = np.array([r.heating_clipped_kwh for r in rows_truth])
    pred = np.array([r.heating_clipped_kwh for r in rows_pred])
    delta = relative_rmse(truth, pred)
    n_kept = int(np.sum(np.abs(truth) >= NEAR_ZERO_KWH))
    return HouseholdValidation(series.meta.household_id, n_kept, delta)


def _validate_worker(args) -> HouseholdValidation:
    return validate_household(*args)


def validate_cohort(households: list[HouseholdSeries], priors: ModelPriors | None = None,
                    config: infer.FitConfig | None = None,
                    split_date: _date | None = None,
                    min_complete_days: int = 180,
                    jobs: int = 1) -> ValidationReport:
    """Run validate_household per household; failures are recorded, not fatal."""
    if not households:
        raise AllFailed("no households to validate")
    if split_date is None:
        split_date = default_split_date(households[0])

    tasks = [(h, priors, config, split_date, min_complete_days) for h in households]
    rows: list[HouseholdValidation] = []
    failures: list[tuple[str, str]] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_validate_worker, task) for task in tasks]
            for h, fut in zip(households, futures):
                try:
                    rows.append(fut.result())
                except HeatsplitError as exc:
                    failures.append((h.meta.household_id, str(exc)))
    else:
        for h, task in zip(households, tasks):
            try:
                rows.append(_validate_worker(task))
            except HeatsplitError as exc:
                failures.append((h.meta.household_id, str(exc)))

    if not rows:
        raise AllFailed(f"all {len(households)} households failed validation")
    eligible = [r.delta for r in rows if r.n_days >= MIN_DAYS_FOR_COHORT_STATS]
    deltas = np.array(eligible if eligible else [r.delta for r in rows])
    return ValidationReport(
        rows=rows,
        failures=failures,
        mean_delta=float(deltas.mean()),
        std_delta=float(deltas.std()),
        split_date=split_date,
    )


def report_to_csv(report: ValidationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(VALIDATION_CSV_HEADER)
    for r in report.rows:
        w.writerow([r.household_id, r.n_days, r.delta])
    return buf.getvalue()


def report_to_json(report: ValidationReport) -> str:
    return json.dumps({
        "mean_delta": report.mean_delta,
        "std_delta": report.std_delta,
        "n_households": len(report.rows),
        "n_failures": len(report.failures),
        "split_date": report.split_date.isoformat(),
    }, sort_keys=True, indent=2)
