"""Per-household variable scaling used by the model internals.

Temperatures are divided by a fixed 30 degC scale; consumption is centered
and divided by the sample standard deviation, so both live near unit
magnitude during inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSample
from .ingest import HouseholdSeries

TEMP_SCALE_C = 30.0

KIND_CONSUMPTION = "consumption"
KIND_CONSUMPTION_DELTA = "consumption_delta"
KIND_TEMPERATURE = "temperature"


@dataclass(frozen=True)
class ScalingParams:
    c_mean: float
    c_std: float
    t_scale: float = TEMP_SCALE_C

    def __post_init__(self):
        if self.c_std <= 0:
            raise DegenerateSample(f"c_std must be positive, got {self.c_std}")


def compute_scaling(series: HouseholdSeries) -> ScalingParams:
    """Scaling parameters from the household's complete days (std uses n-1)."""
    values = np.array([d.consumption_kwh for d in series.complete_days()], dtype=float)
    if values.size < 2:
        raise DegenerateSample(f"need at least 2 complete days, got {values.size}")
    std = float(values.std(ddof=1))
    if std == 0.0:
        raise DegenerateSample("all consumption values are equal")
    return ScalingParams(c_mean=float(values.mean()), c_std=std)


def apply_scaling(obs, s: ScalingParams):
    """Map physical (consumption kWh, temperature degC) to scaled units."""
    c, t = obs
    return (np.asarray(c, dtype=float) - s.c_mean) / s.c_std, np.asarray(t, dtype=float) / s.t_scale


def invert_scaling(values, s: ScalingParams, kind: str):
    """Map scaled values back to physical units.

    ``consumption`` restores mean and scale, ``consumption_delta`` restores
    scale only (differences such as heating components), ``temperature``
    multiplies by the temperature scale.
    """
    values = np.asarray(values, dtype=float)
    if kind == KIND_CONSUMPTION:
        return values * s.c_std + s.c_mean
    if kind == KIND_CONSUMPTION_DELTA:
        return values * s.c_std
    if kind == KIND_TEMPERATURE:
        return values * s.t_scale
    raise ValueError(f"unknown kind {kind!r}")
