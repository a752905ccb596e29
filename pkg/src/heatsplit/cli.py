"""Command-line front end: simulate, fit, disaggregate, analyze, validate, plot.

Exit codes: 0 success, 1 usage or input error, 2 partial failure (some
households failed while others succeeded).  Every subcommand is deterministic
given its inputs and ``--seed``; per-household outputs are written atomically.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields as dc_fields
from datetime import date as _date, datetime, time as _time, timedelta, timezone
from pathlib import Path

from . import analyze, disagg, infer, svgplot, validate
from .errors import HeatsplitError, MissingFit
from .ingest import HouseholdSeries, ingest_directory, filter_reference
from .model import ModelParams, ModelPriors, SyntheticHousehold, TempProfile, simulate
from .preprocess import ScalingParams

DEFAULT_MIN_DAYS = 180
DEFAULT_BIN_WIDTH = 0.05  # kWh per degC

ELECTRIC_SLOPES = (-2.0, -0.5)
GAS_SLOPES = (-0.04, -0.02)

_TOP_CONFIG_KEYS = {"input_dir", "out_dir", "seed", "jobs", "priors", "fit", "simulate"}
_PRIORS_KEYS = {f.name for f in dc_fields(ModelPriors)}
_FIT_KEYS = {f.name for f in dc_fields(infer.FitConfig)} - {"seed"}
_SIM_KEYS = {"households", "days", "start_date", "heating", "tc_celsius", "slope_home",
             "slope_away", "slope_right", "sigma", "omega_home", "bias", "c_mean", "c_std"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, per the exit-code contract
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _household_seed(base: int, household_id: str) -> int:
    return infer._mix(base, zlib.crc32(household_id.encode()))


def _load_run_config(path: str | None) -> dict:
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    _check_keys(cfg, _TOP_CONFIG_KEYS, "config")
    _check_keys(cfg.get("priors", {}), _PRIORS_KEYS, "config.priors")
    _check_keys(cfg.get("fit", {}), _FIT_KEYS, "config.fit")
    _check_keys(cfg.get("simulate", {}), _SIM_KEYS, "config.simulate")
    return cfg


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise HeatsplitError(f"unknown keys in {where}: {sorted(unknown)}")


def _priors_from_config(cfg: dict) -> ModelPriors:
    overrides = dict(cfg.get("priors", {}))
    for key in ("alpha_threshold", "alpha_slopes", "alpha_mixture",
                "slope_support", "threshold_support"):
        if overrides.get(key) is not None:
            overrides[key] = tuple(overrides[key])
    return ModelPriors(**overrides)


def _fit_config_from(cfg: dict, seed: int) -> infer.FitConfig:
    return infer.FitConfig(seed=seed, **cfg.get("fit", {}))


def _resolve(value, cfg: dict, key: str, default):
    if value is not None:
        return value
    return cfg.get(key, default)


def _pmap(fn, tasks: list, jobs: int) -> list:
    """Map preserving order; results are independent of scheduling."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# --- simulate -----------------------------------------------------------------

def _truth_params(heating: str, options: dict) -> ModelParams:
    if heating == "gas":
        slopes = GAS_SLOPES
    else:
        slopes = (options["slope_home"], options["slope_away"])
    return ModelParams.create(
        thresholds=[options["tc_celsius"] / 30.0],
        bias=options["bias"],
        slope_right=options["slope_right"],
        slopes_left=list(slopes),
        mixture_weights=[options["omega_home"], 1.0 - options["omega_home"]],
        sigmas_left=[options["sigma"], options["sigma"]],
        sigma_right=options["sigma"],
    )


def _meter_csv(syn: SyntheticHousehold) -> str:
    lines = ["timestamp,energy_kwh"]
    for day in syn.series.days:
        per_interval = day.consumption_kwh / 48.0
        base = datetime.combine(day.date, _time(0, 0), tzinfo=timezone.utc)
        for k in range(48):
            ts = base + timedelta(minutes=30 * k)
            lines.append(f"{ts.isoformat()},{per_interval!r}")
    return "\n".join(lines) + "\n"


def _weather_csv(syn: SyntheticHousehold) -> str:
    meta = syn.series.meta
    lines = [f"#station,{syn.series.station_id},{meta.latitude!r},{meta.longitude!r}",
             "timestamp,temp_c,wind_speed,wind_dir"]
    # intra-day sinusoid sums to zero over 24 equally spaced hours, so the
    # daily mean recovered downstream equals the simulated daily temperature
    for day in syn.series.days:
        base = datetime.combine(day.date, _time(0, 0), tzinfo=timezone.utc)
        for h in range(24):
            temp = day.temp_c + 3.0 * math.sin(2.0 * math.pi * (h - 9) / 24.0)
            lines.append(f"{(base + timedelta(hours=h)).isoformat()},{temp!r},,")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    cfg = _load_run_config(args.config)
    sim_cfg = cfg.get("simulate", {})
    out_dir = Path(_resolve(args.out_dir, cfg, "out_dir", None) or _fail("--out-dir is required"))
    seed = int(_resolve(args.seed, cfg, "seed", 0))
    options = {
        "households": int(_resolve(args.households, sim_cfg, "households", 20)),
        "days": int(_resolve(args.days, sim_cfg, "days", 365)),
        "start_date": _resolve(args.start_date, sim_cfg, "start_date", "2019-07-01"),
        "heating": _resolve(args.heating, sim_cfg, "heating", "electric"),
        "tc_celsius": float(_resolve(args.tc_celsius, sim_cfg, "tc_celsius", 15.0)),
        "slope_home": float(_resolve(args.slope_home, sim_cfg, "slope_home", ELECTRIC_SLOPES[0])),
        "slope_away": float(_resolve(args.slope_away, sim_cfg, "slope_away", ELECTRIC_SLOPES[1])),
        "slope_right": float(_resolve(args.slope_right, sim_cfg, "slope_right", 0.0)),
        "sigma": float(_resolve(args.sigma, sim_cfg, "sigma", 0.1)),
        "omega_home": float(_resolve(args.omega_home, sim_cfg, "omega_home", 0.7)),
        "bias": float(_resolve(args.bias, sim_cfg, "bias", -0.25)),
        "c_mean": float(_resolve(args.c_mean, sim_cfg, "c_mean", 25.0)),
        "c_std": float(_resolve(args.c_std, sim_cfg, "c_std", 4.0)),
    }
    start = _date.fromisoformat(options["start_date"])
    scaling = ScalingParams(c_mean=options["c_mean"], c_std=options["c_std"])

    meta_lines = ["household_id,lat,lon,heating_type,year_built,surface_m2"]
    truth: dict = {"seed": seed, "options": options, "households": {}}
    for i in range(options["households"]):
        hid = f"h{i:03d}"
        if options["heating"] == "mixed":
            heating = "electric" if i % 2 == 0 else "gas"
        else:
            heating = options["heating"]
        params = _truth_params(heating, options)
        lat, lon = 48.0 + 0.01 * i, 2.0 + 0.005 * i
        year_built = 1975 if i % 2 == 0 else 2005
        syn = simulate(params, options["days"], TempProfile(), seed=seed + i,
                       scaling=scaling, start=start, household_id=hid,
                       heating_type=heating, latitude=lat, longitude=lon,
                       year_built=year_built, surface_m2=100.0)
        _write_atomic(out_dir / "meter" / f"{hid}.csv", _meter_csv(syn))
        _write_atomic(out_dir / "weather" / f"{syn.series.station_id}.csv", _weather_csv(syn))
        meta_lines.append(f"{hid},{lat!r},{lon!r},{heating},{year_built},100.0")
        truth["households"][hid] = {
            "sim_seed": seed + i,
            "heating_type": heating,
            "params": params.as_dict(scaling),
            "scaling": {"c_mean": scaling.c_mean, "c_std": scaling.c_std,
                        "t_scale": scaling.t_scale},
            "dates": [d.date.isoformat() for d in syn.series.days],
            "states": syn.states.tolist(),
            "heating_truth_kwh": syn.heating_truth_kwh.tolist(),
            "heating_truth_clipped_kwh": syn.heating_truth_clipped_kwh.tolist(),
        }
    _write_atomic(out_dir / "metadata.csv", "\n".join(meta_lines) + "\n")
    _write_atomic(out_dir / "truth.json", json.dumps(truth, sort_keys=True, indent=2))
    print(f"wrote {options['households']} synthetic households to {out_dir}")
    return 0


def _fail(message: str):
    raise HeatsplitError(message)


# --- fit ------------------------------------------------------------------------

def _fit_worker(task):
    series, priors, config = task
    return infer.fit(series, priors, config)


def _load_households(input_dir: str | None, min_days: int) -> list[HouseholdSeries]:
    if input_dir is None:
        _fail("--input-dir is required")
    households, problems = ingest_directory(input_dir)
    for p in problems:
        print(f"warning: {p}", file=sys.stderr)
    return filter_reference(households, min_days)


def cmd_fit(args) -> int:
    cfg = _load_run_config(args.config)
    input_dir = _resolve(args.input_dir, cfg, "input_dir", None)
    out_dir = Path(_resolve(args.out_dir, cfg, "out_dir", None) or _fail("--out-dir is required"))
    seed = int(_resolve(args.seed, cfg, "seed", 0))
    jobs = int(_resolve(args.jobs, cfg, "jobs", 1))
    households = _load_households(input_dir, args.min_days)
    if not households:
        print("no households", file=sys.stderr)
        return 1

    priors = _priors_from_config(cfg)
    tasks = [(h, priors, _fit_config_from(cfg, _household_seed(seed, h.meta.household_id)))
             for h in households]
    failures = 0
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_fit_worker, task) for task in tasks]
            results = []
            for h, fut in zip(households, futures):
                try:
                    results.append((h, fut.result()))
                except HeatsplitError as exc:
                    print(f"error: {h.meta.household_id}: {exc}", file=sys.stderr)
                    failures += 1
    else:
        results = []
        for h, task in zip(households, tasks):
            try:
                results.append((h, _fit_worker(task)))
            except HeatsplitError as exc:
                print(f"error: {h.meta.household_id}: {exc}", file=sys.stderr)
                failures += 1

    out_dir.mkdir(parents=True, exist_ok=True)
    for h, result in results:
        result.save(out_dir / f"{h.meta.household_id}.fit.json")
    print(f"fitted {len(results)} households ({failures} failed)")
    return 2 if failures else 0


# --- disaggregate ----------------------------------------------------------------

def cmd_disaggregate(args) -> int:
    cfg = _load_run_config(args.config)
    input_dir = _resolve(args.input_dir, cfg, "input_dir", None)
    out_dir = Path(_resolve(args.out_dir, cfg, "out_dir", None) or _fail("--out-dir is required"))
    fits_dir = Path(args.fits_dir or _fail("--fits-dir is required"))
    households = _load_households(input_dir, args.min_days)
    if not households:
        print("no households", file=sys.stderr)
        return 1

    missing = [h.meta.household_id for h in households
               if not (fits_dir / f"{h.meta.household_id}.fit.json").exists()]
    if missing:
        raise MissingFit(f"no fit file for: {', '.join(missing)}")

    failures = 0
    for h in households:
        fit = infer.FitResult.load(fits_dir / f"{h.meta.household_id}.fit.json")
        try:
            rows = disagg.disaggregate_series(h, fit)
        except HeatsplitError as exc:
            print(f"error: {h.meta.household_id}: {exc}", file=sys.stderr)
            failures += 1
            continue
        _write_atomic(out_dir / f"{h.meta.household_id}.disagg.csv", disagg.rows_to_csv(rows))
    print(f"disaggregated {len(households) - failures} households ({failures} failed)")
    return 2 if failures else 0


# --- analyze ----------------------------------------------------------------------

def cmd_analyze(args) -> int:
    cfg = _load_run_config(args.config)
    input_dir = _resolve(args.input_dir, cfg, "input_dir", None)
    out_dir = Path(_resolve(args.out_dir, cfg, "out_dir", None) or _fail("--out-dir is required"))
    households = _load_households(input_dir, args.min_days)
    if not households:
        print("no households", file=sys.stderr)
        return 1

    slope_reports, ks_reports = [], []
    for h in households:
        try:
            slope_reports.append(analyze.cold_slope(h))
        except HeatsplitError as exc:
            print(f"warning: {h.meta.household_id}: {exc}", file=sys.stderr)
        try:
            cons = [d.consumption_kwh for d in h.complete_days()]
            ks_reports.append(analyze.ks_normal_vs_lognormal(
                cons, household_id=h.meta.household_id))
        except HeatsplitError as exc:
            print(f"warning: {h.meta.household_id}: {exc}", file=sys.stderr)

    _write_atomic(out_dir / "slopes.csv", analyze.slope_reports_to_csv(slope_reports))
    _write_atomic(out_dir / "ks.csv", analyze.ks_reports_to_csv(ks_reports))
    if slope_reports:
        for group in (analyze.GROUP_HEATING_TYPE, analyze.GROUP_BUILT_BEFORE_1990):
            hist = analyze.category_histogram(slope_reports, group, args.bin_width)
            _write_atomic(out_dir / f"histogram_{group}.csv", analyze.histogram_to_csv(hist))
    print(f"analyzed {len(households)} households "
          f"({len(slope_reports)} slope rows, {len(ks_reports)} ks rows)")
    return 0


# --- validate ----------------------------------------------------------------------

def cmd_validate(args) -> int:
    cfg = _load_run_config(args.config)
    input_dir = _resolve(args.input_dir, cfg, "input_dir", None)
    out_dir = Path(_resolve(args.out_dir, cfg, "out_dir", None) or _fail("--out-dir is required"))
    seed = int(_resolve(args.seed, cfg, "seed", 0))
    jobs = int(_resolve(args.jobs, cfg, "jobs", 1))
    households = _load_households(input_dir, args.min_days)
    if not households:
        print("no households", file=sys.stderr)
        return 1

    split = _date.fromisoformat(args.split_date) if args.split_date else None
    priors = _priors_from_config(cfg)
    fit_config = _fit_config_from(cfg, seed)
    report = validate.validate_cohort(households, priors, fit_config, split_date=split,
                                      min_complete_days=args.min_days, jobs=jobs)
    _write_atomic(out_dir / "validation.csv", validate.report_to_csv(report))
    _write_atomic(out_dir / "validation.json", validate.report_to_json(report))
    for hid, msg in report.failures:
        print(f"error: {hid}: {msg}", file=sys.stderr)
    print(f"validated {len(report.rows)} households, "
          f"mean delta {report.mean_delta:.3f} +/- {report.std_delta:.3f}")
    return 2 if report.failures else 0


# --- plot --------------------------------------------------------------------------

PLOT_KINDS = ("scatter", "slopes", "posterior", "timeseries")


def cmd_plot(args) -> int:
    cfg = _load_run_config(args.config)
    input_dir = _resolve(args.input_dir, cfg, "input_dir", None)
    out_dir = Path(_resolve(args.out_dir, cfg, "out_dir", None) or _fail("--out-dir is required"))
    kinds = args.kinds.split(",") if args.kinds else list(PLOT_KINDS)
    for kind in kinds:
        if kind not in PLOT_KINDS:
            _fail(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}")

    households = _load_households(input_dir, args.min_days)
    if not households:
        print("no households", file=sys.stderr)
        return 1
    by_id = {h.meta.household_id: h for h in households}

    if "scatter" in kinds or "posterior" in kinds:
        if not args.fits_dir:
            _fail("--fits-dir is required for scatter/posterior plots")
        fits_dir = Path(args.fits_dir)
        for hid, h in sorted(by_id.items()):
            path = fits_dir / f"{hid}.fit.json"
            if not path.exists():
                raise MissingFit(f"no fit file for {hid}")
            fit = infer.FitResult.load(path)
            days = h.complete_days()
            if "scatter" in kinds:
                svg = svgplot.scatter_figure(
                    [d.temp_c for d in days], [d.consumption_kwh for d in days],
                    fit.posterior_summary, title=hid)
                _write_atomic(out_dir / f"scatter_{hid}.svg", svg)
            if "posterior" in kinds:
                svg = svgplot.posterior_figure(fit.posterior_summary, title=hid)
                _write_atomic(out_dir / f"posterior_{hid}.svg", svg)

    if "timeseries" in kinds:
        if not args.disagg_dir:
            _fail("--disagg-dir is required for timeseries plots")
        disagg_dir = Path(args.disagg_dir)
        window = args.moving_average or 0
        for hid, h in sorted(by_id.items()):
            path = disagg_dir / f"{hid}.disagg.csv"
            if not path.exists():
                raise MissingFit(f"no disaggregation file for {hid}")
            rows = disagg.rows_from_csv(path.read_text())
            temps = {d.date: d.temp_c for d in h.days}
            svg = svgplot.timeseries_figure(
                [r.date for r in rows],
                [r.c_tot_kwh for r in rows],
                [r.heating_clipped_kwh for r in rows],
                [temps[r.date] for r in rows],
                smooth_window=window if window > 1 else None,
                title=hid)
            _write_atomic(out_dir / f"timeseries_{hid}.svg", svg)

    if "slopes" in kinds:
        reports = []
        for h in households:
            try:
                reports.append(analyze.cold_slope(h))
            except HeatsplitError as exc:
                print(f"warning: {h.meta.household_id}: {exc}", file=sys.stderr)
        if reports:
            for group in (analyze.GROUP_HEATING_TYPE, analyze.GROUP_BUILT_BEFORE_1990):
                hist = analyze.category_histogram(reports, group, args.bin_width)
                if hist.rows:
                    svg = svgplot.histogram_figure(hist.rows, title=f"cold slopes by {group}")
                    _write_atomic(out_dir / f"slopes_{group}.svg", svg)
    print(f"wrote plots to {out_dir}")
    return 0


# --- parser --------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="heatsplit",
                     description="Bayesian disaggregation of electrical heating "
                                 "from daily smart-meter data")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", help="output directory")
        p.add_argument("--seed", type=int, help="base random seed (default 0)")
        p.add_argument("--jobs", type=int, help="parallel workers (default 1)")
        p.add_argument("--config", help="JSON file with priors/fit/simulate overrides")
        p.add_argument("--min-days", type=int, default=DEFAULT_MIN_DAYS,
                       help="minimum complete days per household (default 180)")

    p = sub.add_parser("simulate", help="write a synthetic cohort (meter/weather/metadata + truth)")
    common(p)
    p.add_argument("--households", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--start-date")
    p.add_argument("--heating", choices=["electric", "gas", "mixed"])
    p.add_argument("--tc-celsius", type=float)
    p.add_argument("--slope-home", type=float)
    p.add_argument("--slope-away", type=float)
    p.add_argument("--slope-right", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--omega-home", type=float)
    p.add_argument("--bias", type=float)
    p.add_argument("--c-mean", type=float)
    p.add_argument("--c-std", type=float)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the model per household, writing <id>.fit.json")
    common(p)
    p.add_argument("--input-dir")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("disaggregate", help="write per-day heating CSVs from fits")
    common(p)
    p.add_argument("--input-dir")
    p.add_argument("--fits-dir")
    p.set_defaults(func=cmd_disaggregate)

    p = sub.add_parser("analyze", help="cold slopes, category histograms and KS reports")
    common(p)
    p.add_argument("--input-dir")
    p.add_argument("--bin-width", type=float, default=DEFAULT_BIN_WIDTH)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="temporal A/B validation of heating estimates")
    common(p)
    p.add_argument("--input-dir")
    p.add_argument("--split-date", help="ISO date; default is mid-January of the heating season")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plot", help="emit SVG figures")
    common(p)
    p.add_argument("--input-dir")
    p.add_argument("--fits-dir")
    p.add_argument("--disagg-dir")
    p.add_argument("--kinds", help=f"comma list from {{{','.join(PLOT_KINDS)}}} (default all)")
    p.add_argument("--moving-average", type=int, default=0,
                   help="moving-average window for timeseries plots (0 = off)")
    p.add_argument("--bin-width", type=float, default=DEFAULT_BIN_WIDTH)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse help/usage paths
        return int(exc.code or 0)
    try:
        return args.func(args)
    except HeatsplitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
