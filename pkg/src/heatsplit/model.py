"""Generative model of daily consumption conditioned on outdoor temperature.

A household's scaled daily consumption follows a single regression line above
an (unknown) temperature threshold.  Below the threshold it is a mixture of
ordered-slope lines -- one per latent occupancy mode -- all constrained to
meet the upper line exactly at the threshold, so the piecewise mean function
is continuous.  Thresholds and ordered slopes are drawn by pushing Dirichlet
samples through a cumulative-sum map onto a bounded support.

This module holds the priors, the ordered transform, the continuity chain,
the marginalized likelihood and forward simulation.  Everything here operates
on *scaled* quantities (see :mod:`heatsplit.preprocess`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from datetime import date as _date, timedelta

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import BadSimplex, NonFinite
from .ingest import DailyObservation, HouseholdMeta, HouseholdSeries
from .preprocess import ScalingParams

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# physical clamp applied to simulated temperatures, degC
TEMP_RANGE_C = (-4.0, 35.0)

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class ModelPriors:
    """Hyperparameters of the generative model.

    ``alpha_threshold`` (length K+1) and ``alpha_slopes`` (length M+1) are
    Dirichlet concentrations feeding the ordered transform; ``alpha_mixture``
    (length M) is the Dirichlet prior on occupancy-mode weights.  The
    threshold support is data dependent and resolved at fit time.
    """

    alpha_threshold: tuple[float, ...] = (2.0, 2.0)
    bias_loc: float = 0.0
    bias_scale: float = 1.0
    slope_right_loc: float = 0.0
    slope_right_scale: float = 0.5
    alpha_slopes: tuple[float, ...] = (2.0, 2.0, 2.0)
    alpha_mixture: tuple[float, ...] = (2.0, 2.0)
    slope_support: tuple[float, float] = (-10.0, 0.0)
    n_thresholds: int = 1
    n_components: int = 2
    threshold_support: tuple[float, float] | None = None

    def __post_init__(self):
        if self.n_thresholds < 1 or self.n_components < 2:
            raise ValueError("need n_thresholds >= 1 and n_components >= 2")
        if len(self.alpha_threshold) != self.n_thresholds + 1:
            raise ValueError("alpha_threshold must have length n_thresholds + 1")
        if len(self.alpha_slopes) != self.n_components + 1:
            raise ValueError("alpha_slopes must have length n_components + 1")
        if len(self.alpha_mixture) != self.n_components:
            raise ValueError("alpha_mixture must have length n_components")
        for a in (*self.alpha_threshold, *self.alpha_slopes, *self.alpha_mixture):
            if a <= 0:
                raise ValueError("concentration parameters must be positive")
        if self.slope_support[0] >= self.slope_support[1]:
            raise ValueError("slope_support must be an increasing interval")

    def with_threshold_support(self, low: float, high: float) -> "ModelPriors":
        return replace(self, threshold_support=(float(low), float(high)))


def threshold_support_from(t_scaled: np.ndarray, margin: float = 0.05) -> tuple[float, float]:
    """Observed scaled temperature range widened by ``margin`` on each side."""
    lo, hi = float(np.min(t_scaled)), float(np.max(t_scaled))
    span = hi - lo
    if span == 0.0:
        return lo - 0.1, hi + 0.1
    return lo - margin * span, hi + margin * span


@dataclass
class ModelParams:
    """One concrete draw of all latent variables (scaled units)."""

    thresholds: np.ndarray        # ordered, length K; last entry is the critical threshold
    bias: float                   # upper-branch bias, anchor of the continuity chain
    slope_right: float
    slopes_left: np.ndarray       # ordered, length M
    biases_left: np.ndarray       # derived by the continuity chain
    mixture_weights: np.ndarray   # simplex, length M
    sigmas_left: np.ndarray       # observation scales, length M
    sigma_right: float

    @classmethod
    def create(cls, thresholds, bias, slope_right, slopes_left, mixture_weights,
               sigmas_left, sigma_right) -> "ModelParams":
        """Build params, deriving the left biases from the continuity chain."""
        thresholds = np.atleast_1d(np.asarray(thresholds, dtype=float))
        slopes_left = np.asarray(slopes_left, dtype=float)
        biases = derive_biases(float(slope_right), float(bias), slopes_left,
                               float(thresholds[-1]))
        return cls(
            thresholds=thresholds,
            bias=float(bias),
            slope_right=float(slope_right),
            slopes_left=slopes_left,
            biases_left=biases,
            mixture_weights=np.asarray(mixture_weights, dtype=float),
            sigmas_left=np.asarray(sigmas_left, dtype=float),
            sigma_right=float(sigma_right),
        )

    def validate(self, tol: float = 1e-9) -> None:
        if np.any(np.diff(self.thresholds) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(np.diff(self.slopes_left) <= 0):
            raise ValueError("left slopes must be strictly increasing")
        top = float(self.thresholds[-1])
        anchor = self.slope_right * top + self.bias
        residual = np.abs(self.slopes_left * top + self.biases_left - anchor)
        if np.any(residual > tol):
            raise ValueError(f"continuity violated by {residual.max():.3g}")
        if abs(self.mixture_weights.sum() - 1.0) > SIMPLEX_TOL or np.any(self.mixture_weights <= 0):
            raise ValueError("mixture weights must be a strictly positive simplex")
        if np.any(self.sigmas_left <= 0) or self.sigma_right <= 0:
            raise ValueError("observation scales must be positive")

    def as_dict(self, scaling: ScalingParams | None = None) -> dict:
        """JSON-friendly dict; adds physical-unit mirrors when scaling is given."""
        out = {
            "thresholds": self.thresholds.tolist(),
            "bias": self.bias,
            "slope_right": self.slope_right,
            "slopes_left": self.slopes_left.tolist(),
            "biases_left": self.biases_left.tolist(),
            "mixture_weights": self.mixture_weights.tolist(),
            "sigmas_left": self.sigmas_left.tolist(),
            "sigma_right": self.sigma_right,
        }
        if scaling is not None:
            k = scaling.c_std / scaling.t_scale
            out["physical"] = {
                "thresholds_c": (self.thresholds * scaling.t_scale).tolist(),
                "bias_kwh_at_0c": scaling.c_mean + scaling.c_std * self.bias,
                "slope_right_kwh_per_c": self.slope_right * k,
                "slopes_left_kwh_per_c": (self.slopes_left * k).tolist(),
                "biases_left_kwh_at_0c": (scaling.c_mean + scaling.c_std * self.biases_left).tolist(),
                "sigmas_left_kwh": (self.sigmas_left * scaling.c_std).tolist(),
                "sigma_right_kwh": self.sigma_right * scaling.c_std,
            }
        return out


def tau_ordered(simplex, support: tuple[float, float]) -> np.ndarray:
    """Map a probability simplex to a strictly ordered tuple inside ``support``.

    The cumulative sums of the first L-1 components give increasing values in
    (0, 1) which are then placed affinely on the support interval.
    """
    simplex = np.asarray(simplex, dtype=float)
    if simplex.ndim != 1 or simplex.size < 2:
        raise BadSimplex("simplex needs at least 2 components")
    if np.any(simplex <= 0):
        raise BadSimplex("simplex components must be strictly positive")
    if abs(simplex.sum() - 1.0) > SIMPLEX_TOL:
        raise BadSimplex(f"simplex sums to {simplex.sum()!r}, not 1")
    low, high = support
    if low >= high:
        raise ValueError("support must be an increasing interval")
    s = np.cumsum(simplex)[:-1]
    return low + s * (high - low)


def ordered_to_simplex(values, support: tuple[float, float]) -> np.ndarray | None:
    """Pre-image of :func:`tau_ordered`; None when values fall outside it."""
    values = np.asarray(values, dtype=float)
    low, high = support
    s = (values - low) / (high - low)
    parts = np.diff(np.concatenate(([0.0], s, [1.0])))
    if np.any(parts <= 0):
        return None
    return parts


def derive_biases(slope_right: float, bias: float, slopes_left, top_threshold: float) -> np.ndarray:
    """Left-branch biases that make every line meet the upper branch at the threshold.

    Chaining ``b_{m+1} = (w_m - w_{m+1}) T + b_m`` from the anchored upper
    branch telescopes to the closed form used here.
    """
    slopes_left = np.asarray(slopes_left, dtype=float)
    return (slope_right - slopes_left) * top_threshold + bias


def _normal_logpdf(x, loc, scale):
    z = (np.asarray(x, dtype=float) - loc) / scale
    return -0.5 * z * z - np.log(scale) - LOG_SQRT_2PI


def log_likelihood(params: ModelParams, obs) -> float:
    """Marginalized log-likelihood of scaled ``(c, T)`` observations.

    Days strictly below the top threshold contribute a mixture density with
    the occupancy state summed out analytically; days at or above it use the
    upper branch line.
    """
    obs = np.asarray(obs, dtype=float).reshape(-1, 2)
    c, t = obs[:, 0], obs[:, 1]
    top = float(params.thresholds[-1])

    comp = (np.log(params.mixture_weights)[None, :]
            + _normal_logpdf(c[:, None],
                             params.slopes_left[None, :] * t[:, None] + params.biases_left[None, :],
                             params.sigmas_left[None, :]))
    mixture = logsumexp(comp, axis=1)
    upper = _normal_logpdf(c, params.slope_right * t + params.bias, params.sigma_right)
    total = float(np.sum(np.where(t < top, mixture, upper)))
    if math.isnan(total) or total == math.inf:
        raise NonFinite("log-likelihood is not finite; check observation scales")
    return total


def _log_dirichlet(p: np.ndarray, alpha) -> float:
    alpha = np.asarray(alpha, dtype=float)
    return float(np.sum((alpha - 1.0) * np.log(p)) + gammaln(alpha.sum()) - gammaln(alpha).sum())


def log_prior(params: ModelParams, priors: ModelPriors) -> float:
    """Log prior density of a parameter draw (observation scales carry none).

    The threshold and left-slope factors are Dirichlet densities on the
    simplex pre-images plus the log-Jacobian of the ordered transform;
    parameters outside their support have density zero (-inf).
    """
    if priors.threshold_support is None:
        raise ValueError("priors.threshold_support must be resolved before use")

    total = 0.0
    for values, alpha, support in (
        (params.thresholds, priors.alpha_threshold, priors.threshold_support),
        (params.slopes_left, priors.alpha_slopes, priors.slope_support),
    ):
        simplex = ordered_to_simplex(values, support)
        if simplex is None:
            return -math.inf
        total += _log_dirichlet(simplex, alpha) - values.size * math.log(support[1] - support[0])

    total += float(_normal_logpdf(params.bias, priors.bias_loc, priors.bias_scale))
    total += float(_normal_logpdf(params.slope_right, priors.slope_right_loc,
                                  priors.slope_right_scale))
    w = params.mixture_weights
    if np.any(w <= 0) or abs(w.sum() - 1.0) > SIMPLEX_TOL:
        return -math.inf
    total += _log_dirichlet(w, priors.alpha_mixture)

    if math.isnan(total) or total == math.inf:
        raise NonFinite("log-prior is not finite")
    return total


@dataclass(frozen=True)
class TempProfile:
    """Seasonal sinusoid with Gaussian noise for simulated temperatures."""

    mean_c: float = 8.0
    amplitude_c: float = 12.0
    noise_std_c: float = 3.0
    coldest_day_of_year: int = 15


@dataclass
class SyntheticHousehold:
    """Forward-simulated household with known latent structure."""

    series: HouseholdSeries
    truth: ModelParams
    scaling: ScalingParams
    states: np.ndarray                    # component index per day, -1 above threshold
    heating_truth_kwh: np.ndarray
    heating_truth_clipped_kwh: np.ndarray
    t_scaled: np.ndarray
    c_scaled: np.ndarray
    seed: int = 0


def simulate(params: ModelParams, n_days: int, profile: TempProfile = TempProfile(),
             seed: int = 0, *, scaling: ScalingParams | None = None,
             start: _date = _date(2019, 7, 1), household_id: str = "synthetic",
             heating_type: str = "electric", latitude: float = 48.85,
             longitude: float = 2.35, year_built: int | None = None,
             surface_m2: float | None = None) -> SyntheticHousehold:
    """Draw a synthetic household from the generative model.

    Daily temperatures follow the profile's sinusoid plus noise, clamped to
    the physically observed range, and are scaled before sampling consumption.
    The per-day latent state and the ground-truth heating component (scaled
    consumption minus the value of the upper branch at the threshold) are
    recorded; the clipped column floors it at zero.  Reproducible given seed.
    """
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    scaling = scaling or ScalingParams(c_mean=25.0, c_std=4.0)
    rng = np.random.default_rng(seed)

    dates = [start + timedelta(days=i) for i in range(n_days)]
    doy = np.array([d.timetuple().tm_yday for d in dates], dtype=float)
    temps = (profile.mean_c
             - profile.amplitude_c * np.cos(2.0 * math.pi * (doy - profile.coldest_day_of_year) / 365.25)
             + rng.normal(0.0, profile.noise_std_c, size=n_days))
    temps = np.clip(temps, *TEMP_RANGE_C)
    t = temps / scaling.t_scale

    top = float(params.thresholds[-1])
    below = t < top
    m = len(params.mixture_weights)
    edges = np.cumsum(params.mixture_weights)
    states = np.where(below, np.searchsorted(edges, rng.random(n_days)), -1)
    states = np.minimum(states, m - 1)

    means = np.where(below,
                     params.slopes_left[states] * t + params.biases_left[states],
                     params.slope_right * t + params.bias)
    sigmas = np.where(below, params.sigmas_left[states], params.sigma_right)
    c = means + sigmas * rng.standard_normal(n_days)

    consumption = np.maximum(c * scaling.c_std + scaling.c_mean, 0.0)
    c = (consumption - scaling.c_mean) / scaling.c_std

    anchor = params.slope_right * top + params.bias
    heating_scaled = np.where(below, c - anchor, 0.0)
    heating_kwh = heating_scaled * scaling.c_std

    days = [DailyObservation(date=d, consumption_kwh=float(ck), temp_c=float(tk), complete=True)
            for d, ck, tk in zip(dates, consumption, temps)]
    meta = HouseholdMeta(household_id=household_id, latitude=latitude, longitude=longitude,
                         heating_type=heating_type, year_built=year_built, surface_m2=surface_m2)
    series = HouseholdSeries(meta=meta, station_id=f"S-{household_id}", days=days)
    return SyntheticHousehold(
        series=series, truth=params, scaling=scaling, states=states,
        heating_truth_kwh=heating_kwh,
        heating_truth_clipped_kwh=np.maximum(heating_kwh, 0.0),
        t_scaled=t, c_scaled=c, seed=seed,
    )
