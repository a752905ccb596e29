"""Shared helpers for the test suite."""

from datetime import date, timedelta

import pytest

from heatsplit.infer import FitConfig
from heatsplit.ingest import DailyObservation, HouseholdMeta, HouseholdSeries
from heatsplit.model import ModelParams


def make_series(consumptions, temps=None, start=date(2019, 10, 1), complete=None,
                household_id="h-test", heating_type="electric", year_built=None):
    consumptions = list(consumptions)
    if temps is None:
        temps = [10.0] * len(consumptions)
    if complete is None:
        complete = [True] * len(consumptions)
    days = [DailyObservation(date=start + timedelta(days=i), consumption_kwh=float(c),
                             temp_c=float(t), complete=bool(f))
            for i, (c, t, f) in enumerate(zip(consumptions, temps, complete))]
    meta = HouseholdMeta(household_id=household_id, latitude=48.0, longitude=2.0,
                         heating_type=heating_type, year_built=year_built)
    return HouseholdSeries(meta=meta, station_id="S1", days=days)


def reference_params(slopes_left=(-2.0, -0.5), omega=(0.7, 0.3), sigma=0.1,
                     tc_scaled=0.5, bias=-0.25, slope_right=0.0) -> ModelParams:
    return ModelParams.create(
        thresholds=[tc_scaled], bias=bias, slope_right=slope_right,
        slopes_left=list(slopes_left), mixture_weights=list(omega),
        sigmas_left=[sigma] * len(slopes_left), sigma_right=sigma)


@pytest.fixture
def quick_config():
    """Short fit for tests that only need the machinery to run."""
    return FitConfig(n_steps=60, n_mc_samples=4, convergence_window=20, seed=11)
