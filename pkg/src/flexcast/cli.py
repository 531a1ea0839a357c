"""
Command line pipeline.

    flexcast generate --config flexcast.toml
    flexcast fit      --config flexcast.toml
    flexcast envelope --config flexcast.toml [--day 25] [--alpha 1/N,0.5,1.0]
    flexcast evaluate --config flexcast.toml
    flexcast plot     --config flexcast.toml
    flexcast run-all  --config flexcast.toml

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from flexcast import battery, envelope, nominal, risk, sim, storage
from flexcast.config import ConfigError, PipelineConfig, alpha_label, parse_alpha, stream_seed

log = logging.getLogger("flexcast")

WEATHER_FILE = "weather.csv"
TEST_WEATHER_FILE = "weather_test.csv"
NOMINAL_TRACE_FILE = "trace_nominal.csv"
REQUEST_TRACE_FILE = "trace_requests.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _weather(cfg: PipelineConfig, stream: str, days: int) -> sim.WeatherSeries:
    w = cfg.weather
    return sim.generate_weather(
        stream_seed(cfg.seed, stream),
        days,
        timestep=cfg.sim.timestep,
        start=w.start,
        mean_temp=w.mean_temp,
        daily_amplitude=w.daily_amplitude,
        drift_std=w.drift_std,
        drift_timescale_hours=w.drift_timescale_hours,
        peak_irradiance=w.peak_irradiance,
        max_temp=w.max_temp,
    )


# -- stages --------------------------------------------------------------------


def generate(cfg: PipelineConfig) -> dict[str, Path]:
    """Simulate the nominal and request periods and write traces plus weather.

    A second, independent weather realization over the same calendar is
    written for envelope prediction and evaluation.
    """
    tr = cfg.training
    spd = cfg.sim.steps_per_day
    days = 7 * (tr.weeks_nominal + tr.weeks_requests)
    weather = _weather(cfg, "weather", days)
    test_weather = _weather(cfg, "weather_test", days)
    nominal_end = 7 * tr.weeks_nominal * spd
    schedule = sim.generate_training_schedule(
        stream_seed(cfg.seed, "schedule"),
        horizon=len(weather) - nominal_end,
        params=tr.schedule_params(),
        timestep=cfg.sim.timestep,
        offset=nominal_end,
    )
    trace = sim.simulate(cfg.sim, weather, schedule, seed=stream_seed(cfg.seed, "noise"))
    paths = {
        "weather": cfg.data_dir / WEATHER_FILE,
        "weather_test": cfg.data_dir / TEST_WEATHER_FILE,
        "nominal": cfg.data_dir / NOMINAL_TRACE_FILE,
        "requests": cfg.data_dir / REQUEST_TRACE_FILE,
    }
    storage.save_weather(weather, paths["weather"])
    storage.save_weather(test_weather, paths["weather_test"])
    storage.save_trace(trace.slice(0, nominal_end), paths["nominal"])
    storage.save_trace(trace.slice(nominal_end, len(trace)), paths["requests"])
    log.info("generated %d nominal and %d request steps with %d requests", nominal_end, len(trace) - nominal_end, len(schedule))
    return paths


def _load_required(loader, path: Path, what: str):
    if not path.exists():
        raise FileNotFoundError(f"{what} not found at {path}; run `flexcast generate` first")
    return loader(path)


def _levels(cfg: PipelineConfig, n_total: int) -> list:
    return [(spec, parse_alpha(spec, n_total, cfg.envelope.snap_alpha)) for spec in cfg.envelope.alphas]


def fit(cfg: PipelineConfig) -> storage.ModelArtifact:
    """Fit the nominal model on request-free data, then identify the battery parameters."""
    nominal_trace = _load_required(storage.load_trace, cfg.data_dir / NOMINAL_TRACE_FILE, "nominal-period trace")
    request_trace = _load_required(storage.load_trace, cfg.data_dir / REQUEST_TRACE_FILE, "request-period trace")
    nc = cfg.nominal
    model, holdout = nominal.fit_nominal(nominal_trace, nc.n_lags, nc.lengthscale_factors, nc.ridges, nc.max_points)
    ic = cfg.identification
    spaces, b_f = battery.identify([request_trace], model, ic.delta, ic.b_f_mode, ic.cap_percentile)
    worst = {}
    for spec in cfg.envelope.alphas:
        try:
            level = parse_alpha(spec, spaces.n_total, cfg.envelope.snap_alpha)
        except ConfigError as exc:
            log.warning("skipping worst-case parameters for alpha %s: %s", spec, exc)
            continue
        worst[spec] = {"j": level.j, **risk.worst_case_params(spaces, level).to_dict()}
    artifact = storage.ModelArtifact(
        nominal=model,
        spaces=spaces,
        b_f=b_f,
        nominal_holdout_rmse=holdout,
        worst_case=worst,
        provenance={"config_sha256": cfg.digest(), "seed": cfg.seed},
    )
    artifact.save(cfg.artifact_path)
    print(f"samples: a+ {spaces.n_plus}, a- {spaces.n_minus} (N = {spaces.n_total}); b_f = {b_f:.4f}")
    print(f"nominal hold-out RMSE: {holdout:.4f}")
    return artifact


def _test_baseline(cfg: PipelineConfig) -> sim.Trace:
    weather = _load_required(storage.load_weather, cfg.data_dir / TEST_WEATHER_FILE, "test weather")
    return sim.simulate(cfg.sim, weather)


def _check_days(cfg: PipelineConfig, days, n_steps: int):
    spd = cfg.sim.steps_per_day
    needed = (max(days) + 1) * spd + cfg.envelope.cap_steps
    if min(days) < 0 or needed >= n_steps:
        raise ConfigError(
            f"days {min(days)}..{max(days)} plus the {cfg.envelope.cap_steps}-step cap need "
            f"{needed + 1} steps of weather, {n_steps} available"
        )
    if min(days) * spd < (cfg.nominal.n_lags - 1):
        raise ConfigError("the first day leaves no history for the weather lags")


def _predict_all(cfg: PipelineConfig, artifact: storage.ModelArtifact, weather, time_grid):
    ec = cfg.envelope
    f_values = artifact.nominal.predict_weather(weather)
    out = []
    for spec, level in _levels(cfg, artifact.spaces.n_total):
        worst = risk.worst_case_params(artifact.spaces, level)
        env = envelope.envelope_from_nominal(
            f_values, worst, ec.power_grid(), time_grid, ec.cap_steps, ec.strict, alpha=level.alpha
        )
        out.append((spec, level, env))
    return out


def envelopes(cfg: PipelineConfig, day: int | None = None) -> list[Path]:
    """Predicted envelopes for one test day at every configured risk level, plus the true one."""
    from flexcast import plotting

    day = cfg.envelope.day if day is None else day
    artifact = _load_required(storage.ModelArtifact.load, cfg.artifact_path, "model artifact")
    baseline = _test_baseline(cfg)
    _check_days(cfg, [day], len(baseline))
    spd = cfg.sim.steps_per_day
    time_grid = cfg.envelope.time_grid([day], spd)
    written = []
    out = cfg.output_dir
    results = _predict_all(cfg, artifact, baseline.weather, time_grid)
    truth = sim.true_envelope(cfg.sim, baseline, cfg.envelope.power_grid(), time_grid, cfg.envelope.cap_steps)
    for name, env, title in [("true", truth, f"true envelope, day {day}")] + [
        (alpha_label(level), env, f"alpha = {level.j}/{level.n_total}, day {day}") for _, level, env in results
    ]:
        csv_path = out / f"envelope_day{day}_{name}.csv"
        storage.save_envelope(env, csv_path)
        plotting.save_envelope_svg(env, csv_path.with_suffix(".svg"), title, spd)
        written += [csv_path, csv_path.with_suffix(".svg")]
    print(f"wrote {len(results)} predicted envelopes and the true envelope for day {day} to {out}")
    return written


METRIC_COLUMNS = ("alpha_spec", "j", "n_total", "alpha", "infeasible_fraction", "mean_abs_error", "cells")


def evaluate(cfg: PipelineConfig, start_day: int | None = None, n_days: int | None = None) -> list[dict]:
    """Compare predicted envelopes with simulated ground truth over consecutive test days."""
    ec = cfg.envelope
    start_day = ec.eval_start_day if start_day is None else start_day
    n_days = ec.eval_days if n_days is None else n_days
    days = list(range(start_day, start_day + n_days))
    artifact = _load_required(storage.ModelArtifact.load, cfg.artifact_path, "model artifact")
    baseline = _test_baseline(cfg)
    _check_days(cfg, days, len(baseline))
    spd = cfg.sim.steps_per_day
    time_grid = ec.time_grid(days, spd)
    truth = sim.true_envelope(cfg.sim, baseline, ec.power_grid(), time_grid, ec.cap_steps)

    rows, day_rows, scatter_rows = [], [], []
    for spec, level, env in _predict_all(cfg, artifact, baseline.weather, time_grid):
        m = envelope.evaluate(env, truth, spd)
        rows.append(
            {
                "alpha_spec": spec,
                "j": level.j,
                "n_total": level.n_total,
                "alpha": level.alpha,
                "infeasible_fraction": m.infeasible_fraction,
                "mean_abs_error": m.mean_abs_error,
                "cells": m.n_cells,
            }
        )
        for d, (frac, mae) in sorted(m.per_day.items()):
            day_rows.append([spec, level.alpha, d, repr(frac), repr(mae)])
        for i, p in enumerate(env.power_grid):
            for jj, t in enumerate(env.time_grid):
                scatter_rows.append([spec, level.j, level.n_total, repr(p), int(t), int(env.durations[i, jj]), int(truth.durations[i, jj])])

    out = cfg.output_dir
    storage.write_atomic(out / "metrics.csv", storage.rows_to_csv(METRIC_COLUMNS, ([r[c] for c in METRIC_COLUMNS] for r in rows)))
    storage.write_atomic(
        out / "metrics_per_day.csv",
        storage.rows_to_csv(("alpha_spec", "alpha", "day", "infeasible_fraction", "mean_abs_error"), day_rows),
    )
    storage.write_atomic(
        out / "scatter.csv",
        storage.rows_to_csv(("alpha_spec", "j", "n_total", "power", "start_step", "predicted", "true"), scatter_rows),
    )
    print(f"evaluation over days {days[0]}..{days[-1]} ({len(time_grid)} start times x {len(ec.power_grid())} levels)")
    print(f"{'alpha':>10} {'j/N':>10} {'infeasible %':>13} {'MAE [steps]':>12}")
    for r in rows:
        print(f"{r['alpha']:>10.4g} {str(r['j']) + '/' + str(r['n_total']):>10} {100 * r['infeasible_fraction']:>13.2f} {r['mean_abs_error']:>12.2f}")
    return rows


def plot(cfg: PipelineConfig) -> list[Path]:
    """Render SVGs from the CSV outputs of ``envelope`` and ``evaluate``."""
    from flexcast import plotting

    out = cfg.output_dir
    spd = cfg.sim.steps_per_day
    written = []
    for csv_path in sorted(out.glob("envelope_day*_*.csv")):
        env = storage.load_envelope(csv_path, cfg.envelope.cap_steps)
        plotting.save_envelope_svg(env, csv_path.with_suffix(".svg"), csv_path.stem.replace("_", " "), spd)
        written.append(csv_path.with_suffix(".svg"))
    metrics = out / "metrics.csv"
    if metrics.exists():
        with open(metrics, newline="") as fh:
            rows = list(csv.DictReader(fh))
        svg = plotting.tradeoff_svg(
            [float(r["alpha"]) for r in rows],
            [float(r["infeasible_fraction"]) for r in rows],
            [float(r["mean_abs_error"]) for r in rows],
        )
        storage.write_atomic(out / "tradeoff.svg", svg)
        written.append(out / "tradeoff.svg")
    scatter = out / "scatter.csv"
    if scatter.exists():
        with open(scatter, newline="") as fh:
            rows = list(csv.DictReader(fh))
        for j, n in dict.fromkeys((int(r["j"]), int(r["n_total"])) for r in rows):
            sel = [r for r in rows if int(r["j"]) == j]
            svg = plotting.scatter_svg(
                np.array([int(r["predicted"]) for r in sel]), np.array([int(r["true"]) for r in sel]), f"alpha = {j}/{n}"
            )
            name = out / f"scatter_j{j}of{n}.svg"
            storage.write_atomic(name, svg)
            written.append(name)
    if not written:
        raise FileNotFoundError(f"nothing to plot in {out}; run `flexcast envelope` or `flexcast evaluate` first")
    print(f"wrote {len(written)} SVG files to {out}")
    return written


def run_all(cfg: PipelineConfig) -> list[dict]:
    generate(cfg)
    fit(cfg)
    envelopes(cfg)
    rows = evaluate(cfg)
    plot(cfg)
    return rows


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flexcast", description="Virtual-battery flexibility envelopes for a heated building.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in [
        ("generate", "simulate training data and test weather"),
        ("fit", "fit the nominal model and identify battery parameters"),
        ("envelope", "predict envelopes for one test day"),
        ("evaluate", "compare predicted and true envelopes"),
        ("plot", "render SVG figures from CSV outputs"),
        ("run-all", "generate, fit, envelope, evaluate and plot"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=Path, help="TOML configuration (defaults if omitted)")
        p.add_argument("--out", type=Path, help="output directory for envelopes, metrics and plots")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--alpha", help="comma-separated risk levels, e.g. 1/N,0.5,1.0")
        if name == "envelope":
            p.add_argument("--day", type=int, help="test-weather day index")
        if name == "evaluate":
            p.add_argument("--start-day", type=int)
            p.add_argument("--n-days", type=int)
    return parser


def _config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.alpha:
        alphas = tuple(a.strip() for a in args.alpha.split(",") if a.strip())
        cfg = dataclasses.replace(cfg, envelope=dataclasses.replace(cfg.envelope, alphas=alphas))
    if args.out:
        cfg = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, output_dir=str(args.out.resolve())))
    return cfg


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
        )
        cfg = _config_from_args(args)
        if args.command == "generate":
            generate(cfg)
        elif args.command == "fit":
            fit(cfg)
        elif args.command == "envelope":
            envelopes(cfg, args.day)
        elif args.command == "evaluate":
            evaluate(cfg, args.start_day, args.n_days)
        elif args.command == "plot":
            plot(cfg)
        elif args.command == "run-all":
            run_all(cfg)
    except (UsageError, ConfigError) as exc:
        print(f"flexcast: error: {exc}", file=sys.stderr)
        return 1
    except battery.IdentificationError as exc:
        print(f"flexcast: identification failed: {exc}", file=sys.stderr)
        print("hint: lengthen the request period or widen the request magnitude band", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every other failure maps to exit code 2
        print(f"flexcast: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
