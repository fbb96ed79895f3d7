"""Command-line front end.

Subcommands:
  calibrate  sweep a synthetic corpus, write the residual table and rate model
  sweep      rate/distortion sweep only (table CSV, no model)
  minrate    residual budget -> minimum viable target bitrate
  run        execute a scenario file
  baseline   execute a scenario with fixed encoder knobs and no feedback

Exit codes: 0 success, 1 run/calibration failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys

from .predictor import FitError, fit, load_model, save_model, write_samples
from .residual_opt import (
    AGGREGATES,
    CalibrationError,
    InfeasibleError,
    METRICS,
    calibrate_detailed,
    min_rate,
    read_table,
    write_table,
)
from .pipeline import RunError, run_scenario
from .scangen import SensorProfile, generate_corpus
from .scenario import BaselineConfig, ScenarioError, load_scenario


def _velocity(text: str) -> tuple[float, float]:
    try:
        vx, vy = (float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'vx,vy', got {text!r}") from None
    return vx, vy


def _add_corpus_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rings", type=int, default=32, help="sensor rings (default 32)")
    p.add_argument("--azimuth", type=int, default=1024, help="azimuth steps per ring (default 1024)")
    p.add_argument("--seed", type=int, default=0, help="environment seed")
    p.add_argument("--scans", type=int, default=60, help="corpus length (default 60)")
    p.add_argument("--scan-hz", type=float, default=10.0, help="scan rate (default 10)")
    p.add_argument("--velocity", type=_velocity, default=(1.0, 0.3), metavar="VX,VY",
                   help="sensor velocity in m/s (default 1.0,0.3)")
    p.add_argument("--aggregate", choices=AGGREGATES, default="mean",
                   help="per-config residual aggregation across the corpus")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")


def _make_corpus(args):
    profile = SensorProfile(rings=args.rings, azimuth_steps=args.azimuth)
    return generate_corpus(profile, args.seed, args.scans, args.scan_hz, args.velocity)


def _cmd_calibrate(args) -> int:
    corpus = _make_corpus(args)
    table, samples = calibrate_detailed(
        corpus, scan_hz=args.scan_hz, aggregate=args.aggregate, n_jobs=args.jobs
    )
    write_table(args.out_table, table)
    print(f"table: {args.out_table} ({len(table.rows)} rows, corpus {table.corpus_id})")
    if args.out_samples:
        write_samples(args.out_samples, samples)
        print(f"samples: {args.out_samples} ({len(samples)})")
    if args.out_model:
        model = fit(samples, args.scan_hz)
        save_model(model, args.out_model)
        rmse = model.diagnostics.get("rel_rmse", float("nan"))
        print(f"model: {args.out_model} (relative RMSE {rmse:.4f})")
    return 0


def _cmd_sweep(args) -> int:
    corpus = _make_corpus(args)
    table, _ = calibrate_detailed(
        corpus, scan_hz=args.scan_hz, aggregate=args.aggregate, n_jobs=args.jobs
    )
    write_table(args.out, table)
    print(f"sweep table: {args.out} ({len(table.rows)} rows, corpus {table.corpus_id})")
    return 0


def _cmd_minrate(args) -> int:
    table = read_table(args.table)
    bounds = min_rate(table, args.epsilon, args.r_max, args.metric)
    print(f"epsilon:   {bounds.epsilon!r} m ({bounds.metric})")
    print(f"r_min_bps: {bounds.r_min_bps!r}")
    print(f"r_max_bps: {bounds.r_max_bps!r}")
    print(f"floor_q:   {bounds.floor.min_q}")
    return 0


def _apply_run_overrides(scenario, args) -> None:
    if getattr(args, "seed", None) is not None:
        scenario.scan_source = dataclasses.replace(scenario.scan_source, seed=args.seed)
        scenario.link = dataclasses.replace(scenario.link, rng_seed=args.seed)
    if getattr(args, "duration", None) is not None:
        scenario.duration = args.duration


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    _apply_run_overrides(scenario, args)
    if args.model is not None:
        scenario.model_path = args.model
    model = load_model(scenario.model_path) if scenario.model_path else None
    result = run_scenario(scenario, model=model, metrics_path=args.out)
    if result.metrics_path:
        print(f"metrics: {result.metrics_path}")
    print(result.summary.to_text())
    return 0


def _cmd_baseline(args) -> int:
    scenario = load_scenario(args.scenario)
    _apply_run_overrides(scenario, args)
    scenario.mode = "baseline"
    scenario.baseline = BaselineConfig(q=args.q, c=args.c, pacing_bps=args.pacing_bps)
    result = run_scenario(scenario, metrics_path=args.out)
    if result.metrics_path:
        print(f"metrics: {result.metrics_path}")
    print(result.summary.to_text())
    return 0


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="scanstream", description=__doc__,
                                  formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="sweep a corpus; write table, samples, model")
    _add_corpus_args(p)
    p.add_argument("--out-table", required=True, help="residual table CSV path")
    p.add_argument("--out-model", default=None, help="rate model JSON path")
    p.add_argument("--out-samples", default=None, help="raw sweep samples CSV path")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("sweep", help="rate/distortion sweep; write table CSV")
    _add_corpus_args(p)
    p.add_argument("--out", required=True, help="output table CSV path")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("minrate", help="residual budget -> minimum target bitrate")
    p.add_argument("--table", required=True, help="residual table CSV from calibrate/sweep")
    p.add_argument("--epsilon", type=float, required=True, help="residual budget in meters")
    p.add_argument("--r-max", type=float, default=10e6, help="upper rate bound in bps")
    p.add_argument("--metric", choices=METRICS, default="mean_ptp")
    p.set_defaults(func=_cmd_minrate)

    p = sub.add_parser("run", help="execute a scenario file")
    p.add_argument("--scenario", required=True, help="scenario YAML path")
    p.add_argument("--seed", type=int, default=None,
                   help="override scan-source and link seeds")
    p.add_argument("--duration", type=float, default=None, help="override duration (s)")
    p.add_argument("--model", default=None, help="override rate model path")
    p.add_argument("--out", default=None, help="override metrics CSV path")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("baseline", help="fixed-config run: no feedback, fixed pacing")
    p.add_argument("--scenario", required=True, help="scenario YAML path")
    p.add_argument("--seed", type=int, default=None,
                   help="override scan-source and link seeds")
    p.add_argument("--duration", type=float, default=None, help="override duration (s)")
    p.add_argument("--q", type=int, default=16, help="fixed quantization bits")
    p.add_argument("--c", type=int, default=0, help="fixed compression level")
    p.add_argument("--pacing-bps", type=float, default=3.5e6, help="fixed pacing rate")
    p.add_argument("--out", default=None, help="override metrics CSV path")
    p.set_defaults(func=_cmd_baseline)
    return top


def cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as e:
        print(f"error: {e} (smallest achievable: {e.smallest_achievable!r} m)", file=sys.stderr)
        return 1
    except (ScenarioError, RunError, CalibrationError, FitError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
