"""Stochastic variational inference for the piecewise mixture model.

The guide places diagonal Normals on unconstrained coordinates of every
continuous latent and a Dirichlet on the mixture weights; observation scales
are point parameters kept in log space.  Ordered blocks (thresholds, left
slopes) use remaining-stick logits as their unconstrained coordinates: every
real vector maps to a valid ordered tuple, and for a single threshold the
coordinate is exactly the logit of the cumulative simplex coordinate.

The ELBO is estimated by Monte Carlo with reparameterized draws (Gaussian
shift-scale; gamma composition for the Dirichlet) and maximized with Adam.
All torch work is float64 and seeded through explicit generators, so a fit is
deterministic given its inputs and seed and safe to run in parallel across
households.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import preprocess
from .errors import Diverged, NonFinite, TooFewObservations
from .ingest import HouseholdSeries
from .model import LOG_SQRT_2PI, ModelPriors, threshold_support_from
from .preprocess import ScalingParams

_DT = torch.float64

MIN_OBSERVATIONS = 30
SUMMARY_SAMPLES = 10_000

STATE_HOME = "home"
STATE_AWAY = "away"


def _mix(seed: int, k: int) -> int:
    """Derive a child seed; LCG-style mixing keeps streams decorrelated."""
    return (seed * 6364136223846793005 + k * 0x9E3779B97F4A7C15 + 1442695040888963407) % (2**63)


@dataclass
class GuidePosterior:
    """Variational parameters of the approximate posterior."""

    threshold_loc: np.ndarray
    threshold_scale: np.ndarray
    bias_loc: float
    bias_scale: float
    slope_right_loc: float
    slope_right_scale: float
    slopes_loc: np.ndarray
    slopes_scale: np.ndarray
    mixture_concentration: np.ndarray
    log_sigma_left: np.ndarray
    log_sigma_right: float
    threshold_support: tuple[float, float]
    slope_support: tuple[float, float]

    def as_dict(self) -> dict:
        return {
            "threshold_loc": self.threshold_loc.tolist(),
            "threshold_scale": self.threshold_scale.tolist(),
            "bias_loc": self.bias_loc,
            "bias_scale": self.bias_scale,
            "slope_right_loc": self.slope_right_loc,
            "slope_right_scale": self.slope_right_scale,
            "slopes_loc": self.slopes_loc.tolist(),
            "slopes_scale": self.slopes_scale.tolist(),
            "mixture_concentration": self.mixture_concentration.tolist(),
            "log_sigma_left": self.log_sigma_left.tolist(),
            "log_sigma_right": self.log_sigma_right,
            "threshold_support": list(self.threshold_support),
            "slope_support": list(self.slope_support),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GuidePosterior":
        return cls(
            threshold_loc=np.asarray(d["threshold_loc"], dtype=float),
            threshold_scale=np.asarray(d["threshold_scale"], dtype=float),
            bias_loc=float(d["bias_loc"]),
            bias_scale=float(d["bias_scale"]),
            slope_right_loc=float(d["slope_right_loc"]),
            slope_right_scale=float(d["slope_right_scale"]),
            slopes_loc=np.asarray(d["slopes_loc"], dtype=float),
            slopes_scale=np.asarray(d["slopes_scale"], dtype=float),
            mixture_concentration=np.asarray(d["mixture_concentration"], dtype=float),
            log_sigma_left=np.asarray(d["log_sigma_left"], dtype=float),
            log_sigma_right=float(d["log_sigma_right"]),
            threshold_support=tuple(d["threshold_support"]),
            slope_support=tuple(d["slope_support"]),
        )


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    Convergence is declared when the mean ELBO over the last window changes
    by less than ``convergence_tol`` relative to the previous window (with a
    unit floor on the denominator so traces near zero stay well behaved).
    """

    n_steps: int = 3000
    n_mc_samples: int = 8
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0
    convergence_window: int = 200
    convergence_tol: float = 1e-4

    def __post_init__(self):
        if self.n_steps < 1 or self.n_mc_samples < 1:
            raise ValueError("n_steps and n_mc_samples must be >= 1")


@dataclass
class FitResult:
    """Fitted guide plus everything needed to reuse it downstream."""

    household_id: str
    guide: GuidePosterior
    scaling: ScalingParams
    elbo_trace: list[float]
    converged: bool
    posterior_summary: dict
    state_labels: dict[int, str]
    n_observations: int
    priors: ModelPriors
    config: FitConfig

    def to_json(self) -> str:
        d = {
            "household_id": self.household_id,
            "guide": self.guide.as_dict(),
            "scaling": {"c_mean": self.scaling.c_mean, "c_std": self.scaling.c_std,
                        "t_scale": self.scaling.t_scale},
            "elbo_trace": self.elbo_trace,
            "converged": self.converged,
            "posterior_summary": self.posterior_summary,
            "state_labels": {str(k): v for k, v in self.state_labels.items()},
            "n_observations": self.n_observations,
            "priors": asdict(self.priors),
            "config": asdict(self.config),
        }
        return json.dumps(d, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        d = json.loads(text)
        pr = dict(d["priors"])
        for key in ("alpha_threshold", "alpha_slopes", "alpha_mixture", "slope_support"):
            pr[key] = tuple(pr[key])
        if pr.get("threshold_support") is not None:
            pr["threshold_support"] = tuple(pr["threshold_support"])
        return cls(
            household_id=d["household_id"],
            guide=GuidePosterior.from_dict(d["guide"]),
            scaling=ScalingParams(**d["scaling"]),
            elbo_trace=list(d["elbo_trace"]),
            converged=bool(d["converged"]),
            posterior_summary=d["posterior_summary"],
            state_labels={int(k): v for k, v in d["state_labels"].items()},
            n_observations=int(d["n_observations"]),
            priors=ModelPriors(**pr),
            config=FitConfig(**d["config"]),
        )

    def save(self, path: str | Path) -> None:
        """Write the fit JSON atomically (temp file + rename)."""
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(self.to_json())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | Path) -> "FitResult":
        return cls.from_json(Path(path).read_text())


# --- unconstrained <-> ordered transforms (numpy side) -----------------------

def sticks_to_ordered(y: np.ndarray, support: tuple[float, float]) -> np.ndarray:
    """Map remaining-stick logits to an ordered tuple inside the support."""
    z = 1.0 / (1.0 + np.exp(-np.asarray(y, dtype=float)))
    s = 1.0 - np.cumprod(1.0 - z, axis=-1)
    lo, hi = support
    return lo + s * (hi - lo)


def ordered_to_sticks(values: np.ndarray, support: tuple[float, float]) -> np.ndarray:
    """Inverse of :func:`sticks_to_ordered` for a single ordered tuple."""
    lo, hi = support
    s = (np.asarray(values, dtype=float) - lo) / (hi - lo)
    s_prev = np.concatenate(([0.0], s[:-1]))
    z = (s - s_prev) / (1.0 - s_prev)
    return np.log(z) - np.log1p(-z)


# --- torch kernel -------------------------------------------------------------

def _stick_ordered_t(y: torch.Tensor, support: tuple[float, float]):
    """Batched stick transform: values, log simplex and log|ds/dy|."""
    lo, hi = support
    logz = torch.nn.functional.logsigmoid(y)
    log1mz = torch.nn.functional.logsigmoid(-y)
    log_rem = torch.cumsum(log1mz, dim=-1)                      # log(1 - s_k)
    log_rem_prev = torch.nn.functional.pad(log_rem[..., :-1], (1, 0))
    s = 1.0 - torch.exp(log_rem)
    values = lo + s * (hi - lo)
    log_simplex = torch.cat([logz + log_rem_prev, log_rem[..., -1:]], dim=-1)
    log_det = (logz + log1mz + log_rem_prev).sum(dim=-1)
    return values, log_simplex, log_det


def _log_dirichlet_t(log_p: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    return (((alpha - 1.0) * log_p).sum(dim=-1)
            + torch.lgamma(alpha.sum()) - torch.lgamma(alpha).sum())


def _normal_logpdf_t(x, loc, scale):
    log_scale = torch.log(scale) if torch.is_tensor(scale) else math.log(scale)
    z = (x - loc) / scale
    return -0.5 * z * z - log_scale - LOG_SQRT_2PI


def _elbo_samples(gt: dict, priors: ModelPriors, threshold_support, slope_support,
                  t: torch.Tensor, c: torch.Tensor, n_samples: int, seed: int) -> torch.Tensor:
    """Per-sample ELBO values at reparameterized guide draws.

    Gaussian blocks draw eps once from one generator; the Dirichlet block
    draws gammas from a second, so perturbing Normal parameters never changes
    the base noise (common random numbers hold under the shared seed).
    """
    n_thr = gt["threshold_loc"].shape[0]
    n_comp = gt["slopes_loc"].shape[0]

    gen = torch.Generator().manual_seed(_mix(seed, 0))
    eps = torch.randn((n_samples, n_thr + 2 + n_comp), generator=gen, dtype=_DT)
    gen_gamma = torch.Generator().manual_seed(_mix(seed, 1))
    conc = gt["mixture_concentration"]
    gammas = torch._standard_gamma(conc.unsqueeze(0).expand(n_samples, n_comp).contiguous(),
                                   generator=gen_gamma)
    gammas = torch.clamp(gammas, min=1e-300)
    log_omega = torch.log(gammas) - torch.log(gammas.sum(dim=-1, keepdim=True))

    y_thr = gt["threshold_loc"] + gt["threshold_scale"] * eps[:, :n_thr]
    bias = gt["bias_loc"] + gt["bias_scale"] * eps[:, n_thr]
    slope_r = gt["slope_right_loc"] + gt["slope_right_scale"] * eps[:, n_thr + 1]
    y_slopes = gt["slopes_loc"] + gt["slopes_scale"] * eps[:, n_thr + 2:]

    thresholds, log_px_thr, logdet_thr = _stick_ordered_t(y_thr, threshold_support)
    slopes, log_px_slo, logdet_slo = _stick_ordered_t(y_slopes, slope_support)
    top = thresholds[:, -1]

    alpha_thr = torch.tensor(priors.alpha_threshold, dtype=_DT)
    alpha_slo = torch.tensor(priors.alpha_slopes, dtype=_DT)
    alpha_mix = torch.tensor(priors.alpha_mixture, dtype=_DT)

    log_prior = (_log_dirichlet_t(log_px_thr, alpha_thr) + logdet_thr
                 + _log_dirichlet_t(log_px_slo, alpha_slo) + logdet_slo
                 + _normal_logpdf_t(bias, priors.bias_loc, priors.bias_scale)
                 + _normal_logpdf_t(slope_r, priors.slope_right_loc, priors.slope_right_scale)
                 + _log_dirichlet_t(log_omega, alpha_mix))

    biases_left = (slope_r.unsqueeze(-1) - slopes) * top.unsqueeze(-1) + bias.unsqueeze(-1)
    t_row, c_row = t.view(1, -1), c.view(1, -1)
    means_left = slopes.unsqueeze(1) * t.view(1, -1, 1) + biases_left.unsqueeze(1)
    comp = log_omega.unsqueeze(1) + _normal_logpdf_t(c.view(1, -1, 1), means_left,
                                                     torch.exp(gt["log_sigma_left"]))
    mixture = torch.logsumexp(comp, dim=-1)
    upper = _normal_logpdf_t(c_row, slope_r.unsqueeze(-1) * t_row + bias.unsqueeze(-1),
                             torch.exp(gt["log_sigma_right"]))
    below = t_row < top.unsqueeze(-1)
    log_lik = torch.where(below, mixture, upper).sum(dim=-1)

    # Normal guide densities in epsilon form (the loc terms cancel exactly)
    log_q = ((-0.5 * eps[:, :n_thr] ** 2 - torch.log(gt["threshold_scale"]) - LOG_SQRT_2PI).sum(-1)
             + (-0.5 * eps[:, n_thr] ** 2 - torch.log(gt["bias_scale"]) - LOG_SQRT_2PI)
             + (-0.5 * eps[:, n_thr + 1] ** 2 - torch.log(gt["slope_right_scale"]) - LOG_SQRT_2PI)
             + (-0.5 * eps[:, n_thr + 2:] ** 2 - torch.log(gt["slopes_scale"]) - LOG_SQRT_2PI).sum(-1)
             + _log_dirichlet_t(log_omega, conc))

    return log_prior + log_lik - log_q


def _tensor(x, requires_grad=False):
    return torch.tensor(np.asarray(x, dtype=float), dtype=_DT, requires_grad=requires_grad)


def _guide_tensors(guide: GuidePosterior, requires_grad=False) -> dict:
    keys = ("threshold_loc", "threshold_scale", "bias_loc", "bias_scale",
            "slope_right_loc", "slope_right_scale", "slopes_loc", "slopes_scale")
    gt = {k: _tensor(getattr(guide, k), requires_grad) for k in keys}
    gt["mixture_concentration"] = _tensor(guide.mixture_concentration)
    gt["log_sigma_left"] = _tensor(guide.log_sigma_left)
    gt["log_sigma_right"] = _tensor(guide.log_sigma_right)
    return gt


def estimate_elbo(guide: GuidePosterior, priors: ModelPriors, data, n_samples: int,
                  seed: int) -> float:
    """Monte Carlo ELBO estimate; deterministic given the seed.

    ``data`` is a pair of scaled arrays ``(t_scaled, c_scaled)``.
    """
    t, c = data
    vals = _elbo_samples(_guide_tensors(guide), priors,
                         guide.threshold_support, guide.slope_support,
                         _tensor(t), _tensor(c), n_samples, seed)
    out = float(vals.mean())
    if math.isnan(out) or math.isinf(out):
        raise NonFinite("ELBO estimate is not finite")
    return out


def elbo_with_gradients(guide: GuidePosterior, priors: ModelPriors, data, n_samples: int,
                        seed: int) -> tuple[float, dict]:
    """ELBO estimate plus backpropagated gradients for the Normal guide parameters."""
    t, c = data
    gt = _guide_tensors(guide, requires_grad=True)
    vals = _elbo_samples(gt, priors, guide.threshold_support, guide.slope_support,
                         _tensor(t), _tensor(c), n_samples, seed)
    elbo = vals.mean()
    elbo.backward()
    grads = {k: v.grad.detach().numpy().copy()
             for k, v in gt.items() if v.grad is not None}
    return float(elbo.detach()), grads


# --- initialization -----------------------------------------------------------

def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line; (0, mean, std) when x carries no information."""
    if x.size < 2 or np.ptp(x) == 0.0:
        resid = float(y.std()) if y.size else 0.0
        return 0.0, float(y.mean()) if y.size else 0.0, resid
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.std(y - (slope * x + intercept)))
    return float(slope), float(intercept), resid


def _spread_increasing(values: np.ndarray, eps: float) -> np.ndarray:
    out = values.copy()
    for i in range(1, out.size):
        if out[i] <= out[i - 1]:
            out[i] = out[i - 1] + eps
    return out


def init_guide(priors: ModelPriors, t_scaled, c_scaled) -> GuidePosterior:
    """Data-driven starting point for the guide.

    The initial top threshold sits at the 40th percentile of observed scaled
    temperatures, the upper line comes from least squares on the warmest 30%
    of days, and the left slopes start at {2x, 4x, ...} the cold-region
    least-squares slope.  All guide scales start at 0.1.
    """
    t = np.asarray(t_scaled, dtype=float)
    c = np.asarray(c_scaled, dtype=float)
    if t.size < MIN_OBSERVATIONS:
        raise TooFewObservations(f"need at least {MIN_OBSERVATIONS} observations, got {t.size}")
    if priors.threshold_support is None:
        raise ValueError("priors.threshold_support must be resolved before init_guide")

    lo, hi = priors.threshold_support
    n_thr, n_comp = priors.n_thresholds, priors.n_components

    quantiles = [40.0 * (k + 1) / n_thr for k in range(n_thr)]
    targets = np.atleast_1d(np.percentile(t, quantiles))
    # clamp well inside the support so the stick logits start unsaturated
    margin = 0.05 * (hi - lo)
    targets = _spread_increasing(np.clip(targets, lo + margin, hi - margin), 1e-3 * (hi - lo))
    threshold_loc = ordered_to_sticks(targets, (lo, hi))

    warm = t >= np.percentile(t, 70.0)
    slope_r, intercept_r, resid_r = _ols(t[warm], c[warm])

    cold = t < np.percentile(t, 40.0)
    if cold.sum() >= 10 and np.ptp(t[cold]) > 0.0:
        cold_slope, _, resid_c = _ols(t[cold], c[cold])
    else:
        cold_slope, resid_c = -1.0, resid_r
    if cold_slope == 0.0:
        cold_slope = -1.0  # flat cold fit carries no ordering information

    slo, shi = priors.slope_support
    smargin = 0.05 * (shi - slo)
    slopes0 = np.sort(np.array([2.0 * (m + 1) * cold_slope for m in range(n_comp)]))
    slopes0 = _spread_increasing(np.clip(slopes0, slo + smargin, shi - smargin), 1e-3 * (shi - slo))
    slopes_loc = ordered_to_sticks(slopes0, (slo, shi))

    return GuidePosterior(
        threshold_loc=threshold_loc,
        threshold_scale=np.full(n_thr, 0.1),
        bias_loc=intercept_r,
        bias_scale=0.1,
        slope_right_loc=slope_r,
        slope_right_scale=0.1,
        slopes_loc=slopes_loc,
        slopes_scale=np.full(n_comp, 0.1),
        mixture_concentration=np.full(n_comp, 2.0),
        log_sigma_left=np.full(n_comp, math.log(max(resid_c, 1e-3))),
        log_sigma_right=math.log(max(resid_r, 1e-3)),
        threshold_support=(lo, hi),
        slope_support=(slo, shi),
    )


# --- posterior summary ---------------------------------------------------------

def _summary_entry(mean_s: float, std_s: float, scale: float, shift: float = 0.0) -> dict:
    return {
        "scaled": {"mean": mean_s, "std": std_s},
        "physical": {"mean": shift + scale * mean_s, "std": abs(scale) * std_s},
    }


def posterior_summary(guide: GuidePosterior, scaling: ScalingParams,
                      n_samples: int = SUMMARY_SAMPLES, seed: int = 0) -> dict:
    """Monte Carlo means/stds of all derived quantities, scaled and physical.

    The continuity chain is applied per sample, so left-bias summaries include
    threshold uncertainty.
    """
    rng = np.random.default_rng(seed)
    n_thr = guide.threshold_loc.size
    n_comp = guide.slopes_loc.size

    eps = rng.standard_normal((n_samples, n_thr + 2 + n_comp))
    y_thr = guide.threshold_loc + guide.threshold_scale * eps[:, :n_thr]
    bias = guide.bias_loc + guide.bias_scale * eps[:, n_thr]
    slope_r = guide.slope_right_loc + guide.slope_right_scale * eps[:, n_thr + 1]
    y_slo = guide.slopes_loc + guide.slopes_scale * eps[:, n_thr + 2:]

    thresholds = sticks_to_ordered(y_thr, guide.threshold_support)
    slopes = sticks_to_ordered(y_slo, guide.slope_support)
    top = thresholds[:, -1]
    biases_left = (slope_r[:, None] - slopes) * top[:, None] + bias[:, None]
    omega = rng.dirichlet(guide.mixture_concentration, size=n_samples)

    k_slope = scaling.c_std / scaling.t_scale

    def stat(x):
        return float(np.mean(x)), float(np.std(x, ddof=1))

    summary = {
        "T_c": _summary_entry(*stat(top), scale=scaling.t_scale),
        "thresholds": [
            _summary_entry(*stat(thresholds[:, k]), scale=scaling.t_scale)
            for k in range(n_thr)
        ],
        "bias": _summary_entry(*stat(bias), scale=scaling.c_std, shift=scaling.c_mean),
        "slope_right": _summary_entry(*stat(slope_r), scale=k_slope),
        "slopes_left": [
            _summary_entry(*stat(slopes[:, m]), scale=k_slope) for m in range(n_comp)
        ],
        "biases_left": [
            _summary_entry(*stat(biases_left[:, m]), scale=scaling.c_std, shift=scaling.c_mean)
            for m in range(n_comp)
        ],
        "omega": {
            "mean": [float(np.mean(omega[:, m])) for m in range(n_comp)],
            "std": [float(np.std(omega[:, m], ddof=1)) for m in range(n_comp)],
        },
        "sigmas_left": [
            {"scaled": float(s), "physical_kwh": float(s) * scaling.c_std}
            for s in np.exp(guide.log_sigma_left)
        ],
        "sigma_right": {
            "scaled": math.exp(guide.log_sigma_right),
            "physical_kwh": math.exp(guide.log_sigma_right) * scaling.c_std,
        },
        "n_samples": n_samples,
    }
    return summary


def label_components(summary: dict, coldest_t_scaled: float) -> dict[int, str]:
    """Map component index to home/away by line value at the coldest observed
    temperature; the larger value is home, ties go to the lower index."""
    slopes = np.array([e["scaled"]["mean"] for e in summary["slopes_left"]])
    biases = np.array([e["scaled"]["mean"] for e in summary["biases_left"]])
    values = slopes * coldest_t_scaled + biases
    home = int(np.argmax(values))  # argmax takes the lowest index on ties
    return {m: (STATE_HOME if m == home else STATE_AWAY) for m in range(slopes.size)}


# --- fitting --------------------------------------------------------------------

def fit(series: HouseholdSeries, priors: ModelPriors | None = None,
        config: FitConfig | None = None) -> FitResult:
    """Fit the model to a household's complete days by SVI.

    Raises TooFewObservations below 30 complete days and Diverged when the
    ELBO becomes NaN.  The run is deterministic given ``config.seed`` and
    invariant to the input day order (days are sorted by date internally).
    """
    priors = priors if priors is not None else ModelPriors()
    config = config if config is not None else FitConfig()

    days = sorted(series.complete_days(), key=lambda d: d.date)
    if len(days) < MIN_OBSERVATIONS:
        raise TooFewObservations(
            f"household {series.meta.household_id!r}: {len(days)} complete days < {MIN_OBSERVATIONS}")
    scaling = preprocess.compute_scaling(series)
    consumption = np.array([d.consumption_kwh for d in days], dtype=float)
    temps = np.array([d.temp_c for d in days], dtype=float)
    c, t = preprocess.apply_scaling((consumption, temps), scaling)

    if priors.threshold_support is None:
        priors = priors.with_threshold_support(*threshold_support_from(t))

    guide0 = init_guide(priors, t, c)

    locs = {
        "threshold_loc": _tensor(guide0.threshold_loc, True),
        "bias_loc": _tensor(guide0.bias_loc, True),
        "slope_right_loc": _tensor(guide0.slope_right_loc, True),
        "slopes_loc": _tensor(guide0.slopes_loc, True),
    }
    log_scales = {
        "threshold_scale": _tensor(np.log(guide0.threshold_scale), True),
        "bias_scale": _tensor(math.log(guide0.bias_scale), True),
        "slope_right_scale": _tensor(math.log(guide0.slope_right_scale), True),
        "slopes_scale": _tensor(np.log(guide0.slopes_scale), True),
    }
    log_conc = _tensor(np.log(guide0.mixture_concentration), True)
    log_sigma_left = _tensor(guide0.log_sigma_left, True)
    log_sigma_right = _tensor(guide0.log_sigma_right, True)

    leaves = [*locs.values(), *log_scales.values(), log_conc, log_sigma_left, log_sigma_right]
    optimizer = torch.optim.Adam(leaves, lr=config.learning_rate,
                                 betas=(config.adam_beta1, config.adam_beta2))
    t_t, c_t = _tensor(t), _tensor(c)

    trace: list[float] = []
    converged = False
    window = config.convergence_window
    for step in range(config.n_steps):
        gt = {**locs, **{k: v.exp() for k, v in log_scales.items()},
              "mixture_concentration": log_conc.exp(),
              "log_sigma_left": log_sigma_left, "log_sigma_right": log_sigma_right}
        vals = _elbo_samples(gt, priors, guide0.threshold_support, guide0.slope_support,
                             t_t, c_t, config.n_mc_samples, _mix(config.seed, step + 2))
        elbo = vals.mean()
        if torch.isnan(elbo):
            raise Diverged(f"ELBO became NaN at step {step}")
        optimizer.zero_grad(set_to_none=True)
        (-elbo).backward()
        optimizer.step()
        trace.append(float(elbo.detach()))

    if len(trace) >= 2 * window:
        m_prev = float(np.mean(trace[-2 * window:-window]))
        m_last = float(np.mean(trace[-window:]))
        converged = (abs(m_last - m_prev)
                     <= config.convergence_tol * max(abs(m_prev), abs(m_last), 1.0))

    guide = GuidePosterior(
        threshold_loc=locs["threshold_loc"].detach().numpy().copy(),
        threshold_scale=np.exp(log_scales["threshold_scale"].detach().numpy()),
        bias_loc=float(locs["bias_loc"].detach()),
        bias_scale=math.exp(float(log_scales["bias_scale"].detach())),
        slope_right_loc=float(locs["slope_right_loc"].detach()),
        slope_right_scale=math.exp(float(log_scales["slope_right_scale"].detach())),
        slopes_loc=locs["slopes_loc"].detach().numpy().copy(),
        slopes_scale=np.exp(log_scales["slopes_scale"].detach().numpy()),
        mixture_concentration=np.exp(log_conc.detach().numpy()),
        log_sigma_left=log_sigma_left.detach().numpy().copy(),
        log_sigma_right=float(log_sigma_right.detach()),
        threshold_support=guide0.threshold_support,
        slope_support=guide0.slope_support,
    )
    summary = posterior_summary(guide, scaling, SUMMARY_SAMPLES, seed=_mix(config.seed, 1))
    labels = label_components(summary, float(np.min(t)))
    return FitResult(
        household_id=series.meta.household_id,
        guide=guide,
        scaling=scaling,
        elbo_trace=trace,
        converged=converged,
        posterior_summary=summary,
        state_labels=labels,
        n_observations=len(days),
        priors=priors,
        config=config,
    )
