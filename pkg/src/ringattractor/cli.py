"""Command-line entry point ``ringsim``.

Exit codes: 0 success, 2 invalid input (bad flags, config or files),
1 failure while running.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import calibration as cal
from .decoder import decode_trace, tracking_error
from .engine import SimulationError, VelocityProfile, mean_rate_profile, run
from .harness import (
    ConfigError,
    ExperimentSpec,
    _json_default,
    hw_accel,
    hw_drift,
    hw_velocity_sweep,
    load_config,
    read_schedule,
    run_tracking_experiment,
    summary_table,
    versions,
)
from .trajectory import import_trajectory


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _trajectory(config, args):
    name = args.trajectory
    if Path(name).suffix == ".csv":
        return import_trajectory(name)
    ex = {"trajectory": name}
    if args.trajectory_seed is not None:
        ex["trajectory_seed"] = args.trajectory_seed
    return config.with_overrides(experiment=ex).trajectory()


def cmd_simulate(args) -> int:
    config = _config(args)
    bounded = args.model == "bounded"
    if args.profile:
        profile = VelocityProfile.from_csv(args.profile)
    else:
        profile = VelocityProfile.constant(args.velocity)
    t_end = args.t_end if args.t_end is not None else float(config.experiment["t_end"])
    cfg = config.sim_config(bounded=bounded, init_angle=args.init_angle)
    raster, applied = run(cfg, profile, t_end)
    trace = decode_trace(raster, cfg.geometry, t_end=t_end)
    # ground truth: the integrated command from the pulse angle
    tt = np.arange(0.0, t_end + 1e-9, 0.01)
    steps = np.diff(tt) * profile.at(tt[:-1])
    truth = list(zip(tt, cfg.init_angle + np.concatenate([[0.0], np.cumsum(steps)])))
    try:
        err = tracking_error(trace, truth).to_dict()
    except ValueError:
        err = None  # nothing decodable
    t0 = min(cfg.init_duration + 0.2, t_end / 2)
    rates = mean_rate_profile(raster, t0, t_end, cfg.n)
    out = _out_dir(args)
    raster.to_csv(out / "raster.csv")
    trace.to_csv(out / "trace.csv")
    summary = {
        "model": args.model,
        "t_end_s": t_end,
        "n_spikes": len(raster),
        "peak_rate_hz": float(rates.max()),
        "peak_neuron": int(rates.argmax()),
        "valid_fraction": float(trace.valid.mean()),
        "tracking_error": err,
        "velocity_applied": applied,
        "config": config.to_dict(),
        "seed": config.seed,
        "versions": versions(),
    }
    _write_json(out / "summary.json", summary)
    mean = "n/a" if err is None else f"{err['mean_deg']:.2f} deg"
    print(f"{len(raster)} spikes, peak {summary['peak_rate_hz']:.1f} Hz, mean error {mean}")
    return 0


def cmd_track(args) -> int:
    config = _config(args)
    traj = _trajectory(config, args)
    spec = ExperimentSpec(args.name, args.model, config, traj, seed=config.seed)
    report = run_tracking_experiment(spec)
    out = _out_dir(args)
    report.to_json(out / "summary.json")
    for model, m in report.metrics.items():
        if "mean_deg" in m:
            print(f"{model:10s} mean {m['mean_deg']:.2f} deg  std {m['std_deg']:.2f} deg")
    if "comparison" in report.metrics:
        c = report.metrics["comparison"]
        print(f"bounded better: {c['bounded_better']}  (p = {c['p_value']})")
    for f in report.failures:
        print(f"FAILED {f['model']} seed {f['seed']}: {f['error']}", file=sys.stderr)
    return 1 if report.failures else 0


def _read_space(path) -> dict:
    from .harness import tomllib

    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return doc


def cmd_calibrate(args) -> int:
    config = _config(args)
    doc = _read_space(args.space) if args.space else {}
    space = doc.get("space", {k: v for k, v in doc.items() if k in cal.GRID_PARAMS})
    unknown = set(doc) - set(cal.GRID_PARAMS) - {"space", "budget", "objective", "refine"}
    if unknown:
        raise ConfigError(f"unknown keys in space file: {sorted(unknown)}")
    space = space or dict(cal.DEFAULT_SPACE)
    obj = cal.CalibrationObjective(**doc.get("objective", {}))
    budget = int(doc.get("budget", args.budget))
    base = config.sim_config()
    results = cal.grid_search(space, obj, base=base, budget=budget)
    refined = None
    if doc.get("refine", not args.no_refine):
        refined = cal.refine_gsin(results[0], obj, base)
    cal.save_report(args.out, results, refined)
    best = refined or results[0]
    print(f"best loss {best.loss:.4g}: i_bg {best.i_bg:.3g}, scale {best.recurrent_scale:.3g}, "
          f"g_sin {best.gains.g_sin:.4g}, kappa {best.velocity_gain_kappa:.3f}")
    if best.warning:
        print(f"warning: {best.warning}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    config = _config(args)
    traj = _trajectory(config, args)
    base = config.sim_config(bounded=args.model == "bounded")
    rows = cal.robustness_sweep(
        args.param, args.values, base=base, trajectory=traj, recalibrate=not args.no_recalibrate
    )
    out = _out_dir(args)
    with open(out / "sweep.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["value", "mean_abs_error_deg", "i_bg", "recurrent_scale", "error"])
        for r in rows:
            wr.writerow([r.value, r.mean_abs_error_deg, r.i_bg, r.recurrent_scale, r.error or ""])
            print(f"{args.param}={r.value:g}: MAE {r.mean_abs_error_deg:.2f} deg"
                  + (f" ({r.error})" if r.error else ""))
    _write_json(out / "summary.json", {
        "param": args.param,
        "rows": [r.__dict__ for r in rows],
        "config": config.to_dict(),
        "seed": config.seed,
        "versions": versions(),
    })
    return 0


def cmd_hw_drift(args) -> int:
    config = _config(args)
    seeds = range(args.seeds) if args.seeds is not None else None
    res = hw_drift(config, seeds=seeds)
    out = _out_dir(args)
    with open(out / "drift.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["window_start_s", "median_error_deg"])
        for t, m in zip(res.window_starts, res.medians):
            wr.writerow([repr(float(t)), repr(float(m))])
    spacing = math.degrees(config.topology.pop_spacing)
    doc = {**res.to_dict(), "pop_spacing_deg": spacing, "config": config.to_dict(),
           "seed": config.seed, "versions": versions()}
    _write_json(out / "summary.json", doc)
    print(f"worst window median {res.worst_median:.2f} deg (spacing {spacing:.0f} deg)")
    return 0


def cmd_hw_sweep(args) -> int:
    config = _config(args)
    res = hw_velocity_sweep(config, counts=args.counts, repeats=args.repeats)
    out = _out_dir(args)
    rows = res.to_rows()
    with open(out / "sweep.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)
    fit = res.fit.to_dict() if res.fit else None
    doc = {
        "fit": fit,
        "doubling": [{"count": k, "ratio": r, "within_ci": ok} for k, r, ok in res.doubling()],
        "config": config.to_dict(),
        "seed": config.seed,
        "versions": versions(),
    }
    _write_json(out / "fit.json", doc)
    for p in res.points:
        print(f"count {p.count}: {p.mean_velocity:.3f} +- {p.sem:.3f} rad/s ({p.n_dead} dead)")
    if fit:
        print(f"slope {fit['slope']:.3f} rad/s per connection, r^2 {fit['r_squared']:.3f}")
    return 0


def cmd_hw_accel(args) -> int:
    config = _config(args)
    if args.count is not None:
        config = config.with_overrides(hw={"accel_count": args.count})
    schedule = read_schedule(args.schedule) if args.schedule else None
    res = hw_accel(config, schedule, t_end=args.t_end)
    out = _out_dir(args)
    res.trace.to_csv(out / "trace.csv")
    _write_json(out / "summary.json", {**res.to_dict(), "config": config.to_dict(),
                                       "seed": config.seed, "versions": versions()})
    for p in res.phases:
        print(f"{p.t0:5.2f}-{p.t1:5.2f} s  count {p.count:+d}  slope {p.slope:.3f} rad/s")
    return 0


def cmd_report(args) -> int:
    docs = []
    for path in args.reports:
        with open(path) as fh:
            doc = json.load(fh)
        docs.extend(doc if isinstance(doc, list) else [doc])
    table = summary_table(docs)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config (or a JSON report to rerun)")
    common.add_argument("--seed", type=int, help="override [experiment] seed")

    p = argparse.ArgumentParser(prog="ringsim", description="Spiking ring-attractor joint estimator")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="one run: raster, trace, summary")
    s.add_argument("--t-end", type=float)
    s.add_argument("--velocity", type=float, default=0.0, help="constant command, rad/s")
    s.add_argument("--profile", help="CSV time_s,velocity_rad_s (overrides --velocity)")
    s.add_argument("--init-angle", type=float, default=0.0)
    s.add_argument("--model", choices=["unbounded", "bounded"], default="unbounded")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("track", parents=[common], help="tracking experiment")
    s.add_argument("--model", choices=["unbounded", "bounded", "paired"], default="paired")
    s.add_argument("--trajectory", default="wide", help="wide, limited, sine or a CSV file")
    s.add_argument("--trajectory-seed", type=int)
    s.add_argument("--name", default="track")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("calibrate", parents=[common], help="grid search then g_sin refinement")
    s.add_argument("--space", help="TOML/JSON parameter space")
    s.add_argument("--out", default="calibration.json")
    s.add_argument("--budget", type=int, default=cal.DEFAULT_BUDGET)
    s.add_argument("--no-refine", action="store_true")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("sweep", parents=[common], help="ring size or firing-rate robustness")
    s.add_argument("--param", choices=["n_neurons", "rate_scale"], required=True)
    s.add_argument("--values", type=_floats, required=True)
    s.add_argument("--trajectory", default="wide")
    s.add_argument("--trajectory-seed", type=int)
    s.add_argument("--model", choices=["unbounded", "bounded"], default="bounded")
    s.add_argument("--no-recalibrate", action="store_true")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_sweep)

    hw = sub.add_parser("hw", help="hardware-mapping emulation")
    hws = hw.add_subparsers(dest="hw_command", required=True)
    s = hws.add_parser("drift", parents=[common], help="stationary drift per 0.5 s window")
    s.add_argument("--seeds", type=int)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_hw_drift)
    s = hws.add_parser("sweep", parents=[common], help="bump velocity vs connection count")
    s.add_argument("--counts", type=_ints)
    s.add_argument("--repeats", type=int)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_hw_sweep)
    s = hws.add_parser("accel", parents=[common], help="velocity schedule run")
    s.add_argument("--schedule", help="CSV time_s,count[,direction]")
    s.add_argument("--count", type=int, help="count for the default three-phase schedule")
    s.add_argument("--t-end", type=float)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_hw_accel)

    s = sub.add_parser("report", help="summary table from JSON reports")
    s.add_argument("reports", nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, RuntimeError, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
