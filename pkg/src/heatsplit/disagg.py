"""Per-day heating estimates and occupancy decoding from a fitted posterior.

The heating component of a day's consumption is the total minus the base
load, the value of the upper branch line at the critical temperature.  Its
posterior mean and variance follow from the Normal approximations of the
upper-branch slope, the threshold and the bias; neither the day's
temperature nor its decoded state enters the estimate.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import date as _date

import numpy as np

from .errors import ScalingMismatch
from .infer import FitResult, STATE_HOME
from .ingest import HouseholdSeries
from .model import LOG_SQRT_2PI
from .preprocess import apply_scaling

STATE_ABOVE = "above_threshold"

DISAGG_CSV_HEADER = ["date", "c_tot_kwh", "heating_mean_kwh", "heating_var_kwh2",
                     "heating_clipped_kwh", "state", "state_prob"]


@dataclass
class DisaggRow:
    date: _date
    c_tot_kwh: float
    heating_mean_kwh: float
    heating_var_kwh2: float
    heating_clipped_kwh: float
    state: str
    state_prob: float


def heating_moments_from(c_tot: float, mu_slope: float, sd_slope: float,
                         mu_threshold: float, sd_threshold: float,
                         mu_bias: float, sd_bias: float) -> tuple[float, float]:
    """Heating mean and variance given base-branch posterior moments (scaled)."""
    mean = c_tot - mu_slope * mu_threshold - mu_bias
    var = ((sd_slope**2 + mu_slope**2) * (sd_threshold**2 + mu_threshold**2)
           - mu_slope**2 * mu_threshold**2 + sd_bias**2)
    return mean, var


def heating_moments(c_tot: float, fit: FitResult) -> tuple[float, float]:
    """Posterior mean and variance of the heating component (scaled units)."""
    s = fit.posterior_summary
    return heating_moments_from(
        c_tot,
        s["slope_right"]["scaled"]["mean"], s["slope_right"]["scaled"]["std"],
        s["T_c"]["scaled"]["mean"], s["T_c"]["scaled"]["std"],
        s["bias"]["scaled"]["mean"], s["bias"]["scaled"]["std"],
    )


def decode_state(obs: tuple[float, float], fit: FitResult) -> tuple[str, float]:
    """Most probable occupancy state for a scaled ``(c, T)`` observation.

    Days at or above the posterior-mean threshold are ``above_threshold`` with
    probability one; below it, the winner maximizes the mixture responsibility
    at posterior means, with ties going to the home component.
    """
    c, t = obs
    s = fit.posterior_summary
    if t >= s["T_c"]["scaled"]["mean"]:
        return STATE_ABOVE, 1.0

    slopes = np.array([e["scaled"]["mean"] for e in s["slopes_left"]])
    biases = np.array([e["scaled"]["mean"] for e in s["biases_left"]])
    omega = np.array(s["omega"]["mean"])
    sigma = np.exp(fit.guide.log_sigma_left)

    z = (c - (slopes * t + biases)) / sigma
    log_resp = np.log(omega) - 0.5 * z * z - np.log(sigma) - LOG_SQRT_2PI
    log_resp -= log_resp.max()
    resp = np.exp(log_resp)
    resp /= resp.sum()

    best = int(np.argmax(resp))
    home = next(k for k, v in fit.state_labels.items() if v == STATE_HOME)
    if resp[home] == resp[best]:
        best = home
    return fit.state_labels[best], float(resp[best])


def disaggregate_series(series: HouseholdSeries, fit: FitResult) -> list[DisaggRow]:
    """Heating estimate and decoded state for every complete day of the series."""
    if fit.household_id != series.meta.household_id:
        raise ScalingMismatch(
            f"fit belongs to {fit.household_id!r}, series to {series.meta.household_id!r}")
    c_std = fit.scaling.c_std
    rows = []
    for day in sorted(series.complete_days(), key=lambda d: d.date):
        c, t = apply_scaling((day.consumption_kwh, day.temp_c), fit.scaling)
        state, prob = decode_state((float(c), float(t)), fit)
        if state == STATE_ABOVE:
            mean_kwh = var_kwh2 = 0.0
        else:
            mean, var = heating_moments(float(c), fit)
            mean_kwh = mean * c_std
            var_kwh2 = var * c_std**2
        rows.append(DisaggRow(
            date=day.date,
            c_tot_kwh=day.consumption_kwh,
            heating_mean_kwh=mean_kwh,
            heating_var_kwh2=var_kwh2,
            heating_clipped_kwh=max(0.0, mean_kwh),
            state=state,
            state_prob=prob,
        ))
    return rows


def moving_average(values, window: int = 7, dates: list[_date] | None = None) -> np.ndarray:
    """Centered moving average, truncated at the series edges.

    With ``dates`` given, each day averages over presently observed days
    within the centered date window (gaps count as absent); otherwise the
    window runs over consecutive indices.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    values = np.asarray(values, dtype=float)
    left, right = (window - 1) // 2, window // 2
    out = np.empty_like(values)
    if dates is None:
        for i in range(values.size):
            out[i] = values[max(0, i - left):i + right + 1].mean()
    else:
        d = np.array([dt.toordinal() for dt in dates])
        for i in range(values.size):
            sel = (d >= d[i] - left) & (d <= d[i] + right)
            out[i] = values[sel].mean()
    return out


def rows_to_csv(rows: list[DisaggRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DISAGG_CSV_HEADER)
    for r in rows:
        writer.writerow([r.date.isoformat(), r.c_tot_kwh, r.heating_mean_kwh,
                         r.heating_var_kwh2, r.heating_clipped_kwh, r.state, r.state_prob])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[DisaggRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != DISAGG_CSV_HEADER:
        raise ValueError("unexpected disaggregation CSV header")
    return [DisaggRow(_date.fromisoformat(r[0]), float(r[1]), float(r[2]), float(r[3]),
                      float(r[4]), r[5], float(r[6])) for r in reader]
