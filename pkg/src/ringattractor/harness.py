"""Experiment orchestration: configuration files, tracking runs and hardware runs.

A :class:`Config` gathers every parameter from a TOML file laid out in the
sections ``[geometry] [gains] [neuron] [synapse] [boundary] [hw]
[experiment]``.  Reports embed ``Config.to_dict()`` and the seed, and
``load_config`` accepts such a report back, so any report can be rerun.
"""

from __future__ import annotations

import json
import math
import platform
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata, resources
from pathlib import Path

import numpy as np

from . import kernel
from .decoder import (
    DecodedTrace,
    decode_trace,
    drift_windows,
    fit_bump_velocity,
    tracking_error,
    unwrap,
)
from .discrete_hw import (
    ConnectionTable,
    HwRunParams,
    HwTopology,
    build_hw_ring,
    decode_hw,
    default_classes,
    pop_angle,
    run_hw,
    velocity_connections,
)
from .engine import (
    NeuronParams,
    SimConfig,
    SimulationError,
    SynapseParams,
    make_config,
    run,
)
from .parallel import parallel_map
from .ring import BoundaryConfig, GainSet
from .trajectory import Trajectory, import_trajectory, make_trajectory

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODELS = ("unbounded", "bounded", "paired", "hw")
PACKAGE = "artifact"


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


# section -> key -> default; None means "not set"
_SCHEMA: dict[str, dict] = {
    "geometry": {"n": 120},
    "gains": {"g_inh": -16.46, "g_cos": 15.86, "g_sin": 0.13},
    "neuron": {"tau_m": 0.020, "v_th": 1.0, "v_reset": 0.0, "t_ref": 0.002, "i_bg": 4.5},
    "synapse": {"tau_syn": 0.010, "spike_increment": 1.0},
    "boundary": {
        "theta_0": 0.0,
        "theta_l": 1.5 * math.pi,
        "ramp_width": math.pi / 60,
        "oob_margin": math.pi / 6,
        "oob_peak": None,
    },
    "hw": {
        "n_pops": 10,
        "pop_size": 4,
        "fan_in_limit": 64,
        "inh_weight": 12.0,
        "exc_weight": 4.0,
        "fast_tau": 0.010,
        "slow_tau": 0.050,
        "exc_class": "fast_exc",
        "inh_class": "fast_inh",
        "velocity_class": "fast_exc",
        "i_bg": None,
        "recurrent_scale": 6.0,
        "cue_current": 2.0,
        "cue_population": 0,
        "cue_duration": 1.0,
        "jitter": 0.05,
        "noise_std": 30.0,
        "t_end": 12.0,
        "counts": [1, 2, 3, 4, 6, 8],
        "repeats": 10,
        "fit_window": [2.5, 9.0],
        "velocity_onset": 2.0,
        "accel_count": 4,
        "accel_stop": 9.0,
        "drift_seeds": 10,
        "drift_window": 0.5,
        "drift_span": 5.0,
    },
    "experiment": {
        "name": "experiment",
        "model": "paired",
        "trajectory": "wide",
        "trajectory_seed": 0,
        "trajectory_file": None,
        "seed": 0,
        "dt": 1e-4,
        "init_current": 2.0,
        "init_duration": 0.1,
        "recurrent_scale": 6.0,
        "noise_std": 0.0,
        "t_end": 0.9,
        "decode_window": 0.050,
        "decode_dt": 0.010,
    },
}


def _merge(doc: dict) -> dict:
    out = {sec: dict(keys) for sec, keys in _SCHEMA.items()}
    for sec, body in doc.items():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        for key, value in body.items():
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            out[sec][key] = value
    return out


@dataclass(frozen=True)
class Config:
    """Validated parameter set; build with :func:`config_from_dict` or :func:`load_config`."""

    sections: dict = field(repr=False)
    gains: GainSet = GainSet()
    neuron: NeuronParams = NeuronParams()
    synapse: SynapseParams = SynapseParams()
    boundary: BoundaryConfig = BoundaryConfig(0.0, 1.5 * math.pi)
    topology: HwTopology = HwTopology()
    hw_params: HwRunParams = HwRunParams()

    @property
    def experiment(self) -> dict:
        return self.sections["experiment"]

    @property
    def hw(self) -> dict:
        return self.sections["hw"]

    @property
    def n(self) -> int:
        return int(self.sections["geometry"]["n"])

    @property
    def seed(self) -> int:
        return int(self.experiment["seed"])

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.sections))

    def with_overrides(self, **sections) -> "Config":
        """Copy with ``section={key: value}`` entries replaced."""
        doc = self.to_dict()
        for sec, body in sections.items():
            doc.setdefault(sec, {}).update(body)
        return config_from_dict(doc)

    def with_seed(self, seed: int) -> "Config":
        return self.with_overrides(experiment={"seed": int(seed)})

    def sim_config(
        self, bounded: bool = False, init_angle: float = 0.0, n: int | None = None
    ) -> SimConfig:
        ex = self.experiment
        return make_config(
            n=n or self.n,
            gains=self.gains,
            boundary=self.boundary if bounded else None,
            neuron=self.neuron,
            synapse=self.synapse,
            dt=float(ex["dt"]),
            init_angle=init_angle,
            init_current=float(ex["init_current"]),
            init_duration=float(ex["init_duration"]),
            recurrent_scale=float(ex["recurrent_scale"]),
            noise_std=float(ex["noise_std"]),
            seed=self.seed,
        )

    def trajectory(self) -> Trajectory:
        ex = self.experiment
        if ex["trajectory_file"]:
            return import_trajectory(ex["trajectory_file"])
        name = ex["trajectory"]
        params = {
            "theta_0": self.boundary.theta_0,
            "theta_l": self.boundary.theta_l,
            "seed": int(ex["trajectory_seed"]),
        }
        if name == "sine":
            span = self.boundary.span
            params.update(center=self.boundary.theta_0 + span / 2, amplitude=0.4 * span)
            return make_trajectory("synthetic-sine", params)
        if name in ("wide", "limited"):
            return make_trajectory("synthetic-trapezoid", {**params, "preset": name})
        raise ConfigError(f"unknown trajectory {name!r}; use wide, limited, sine or a file")


def config_from_dict(doc: dict) -> Config:
    s = _merge(doc)
    try:
        gains = GainSet(**{k: float(v) for k, v in s["gains"].items()})
        neuron = NeuronParams(**{k: float(v) for k, v in s["neuron"].items()})
        synapse = SynapseParams(**{k: float(v) for k, v in s["synapse"].items()})
        b = s["boundary"]
        boundary = BoundaryConfig(
            float(b["theta_0"]),
            float(b["theta_l"]),
            ramp_width=float(b["ramp_width"]),
            oob_margin=float(b["oob_margin"]),
            oob_peak=None if b["oob_peak"] is None else float(b["oob_peak"]),
        )
        h = s["hw"]
        classes = tuple(
            replace(c, tau=float(h["fast_tau"] if c.name.startswith("fast") else h["slow_tau"]))
            for c in default_classes(float(h["inh_weight"]), float(h["exc_weight"]))
        )
        topology = HwTopology(
            n_pops=int(h["n_pops"]),
            pop_size=int(h["pop_size"]),
            fan_in_limit=int(h["fan_in_limit"]),
            synapse_classes=classes,
            exc_class=h["exc_class"],
            inh_class=h["inh_class"],
            velocity_class=h["velocity_class"],
        )
        hw_neuron = neuron if h["i_bg"] is None else replace(neuron, i_bg=float(h["i_bg"]))
        hw_params = HwRunParams(
            neuron=hw_neuron,
            dt=float(s["experiment"]["dt"]),
            recurrent_scale=float(h["recurrent_scale"]),
            cue_current=float(h["cue_current"]),
            jitter=float(h["jitter"]),
            noise_std=float(h["noise_std"]),
            seed=int(s["experiment"]["seed"]),
        )
        if int(s["geometry"]["n"]) < 4:
            raise ValueError("[geometry] n must be at least 4")
        if s["experiment"]["model"] not in MODELS:
            raise ValueError(f"[experiment] model must be one of {MODELS}")
        if not 0 <= int(h["cue_population"]) < topology.n_pops:
            raise ValueError("[hw] cue_population out of range")
        if int(h["repeats"]) < 2:
            raise ValueError("[hw] repeats must be at least 2")
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return Config(s, gains, neuron, synapse, boundary, topology, hw_params)


def default_config() -> Config:
    """The packaged ``default.toml`` preset (calibrated currents and gains)."""
    text = resources.files(__package__).joinpath("presets/default.toml").read_text()
    return config_from_dict(tomllib.loads(text))


def load_config(path=None) -> Config:
    """Read a TOML config, or a JSON report holding a ``config`` echo.

    Keys missing from the file take their values from the packaged preset.
    """
    base = default_config()
    if path is None:
        return base
    path = Path(path)
    try:
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
            doc = doc.get("config", doc)
        else:
            doc = tomllib.loads(path.read_text())
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    merged = base.to_dict()
    for sec, body in doc.items():
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        merged.setdefault(sec, {}).update(body)
    return config_from_dict(merged)


def versions() -> dict:
    try:
        pkg = metadata.version(PACKAGE)
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {
        PACKAGE: pkg,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "kernel": kernel.BACKEND,
    }


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    model: str
    config: Config
    trajectory: Trajectory | None = None
    metrics: tuple[str, ...] = ("tracking_error",)
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.model in ("bounded", "paired") and self.config.boundary is None:
            raise ValueError("the bounded model needs a boundary config")
        if self.model == "hw" and self.config.topology is None:
            raise ValueError("the hw model needs a topology")
        if self.model != "hw" and self.trajectory is None:
            raise ValueError("tracking experiments need a trajectory")

    @classmethod
    def from_config(cls, config: Config, name: str | None = None) -> "ExperimentSpec":
        ex = config.experiment
        model = ex["model"]
        traj = None if model == "hw" else config.trajectory()
        return cls(name or ex["name"], model, config, traj, seed=config.seed)


@dataclass
class Report:
    name: str
    metrics: dict
    config: dict
    seed: int
    trajectory: dict = field(default_factory=dict)
    versions: dict = field(default_factory=versions)
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _nan_to_none(values) -> list:
    return [None if (v is None or math.isnan(v)) else float(v) for v in values]


@dataclass(frozen=True)
class TrackingRun:
    model: str
    trace: DecodedTrace
    mean_deg: float
    std_deg: float
    windows: np.ndarray

    def metrics(self) -> dict:
        return {
            "mean_deg": self.mean_deg,
            "std_deg": self.std_deg,
            "window_mean_deg": _nan_to_none(self.windows),
        }


def track(config: Config, traj: Trajectory, bounded: bool) -> TrackingRun:
    """One tracking run: pulse at the initial angle, then velocity input only."""
    ex = config.experiment
    cfg = config.sim_config(bounded=bounded, init_angle=traj.initial_angle)
    raster, _ = run(cfg, traj.velocity_profile(), traj.duration)
    trace = decode_trace(
        raster,
        cfg.geometry,
        dt_out=float(ex["decode_dt"]),
        window=float(ex["decode_window"]),
        t_end=traj.duration,
    )
    err = tracking_error(trace, traj.truth)
    return TrackingRun(
        "bounded" if bounded else "unbounded", trace, err.mean_deg, err.std_deg, err.windows
    )


def paired_window_test(unbounded: np.ndarray, bounded: np.ndarray) -> dict:
    """Wilcoxon signed-rank test on per-window errors (bounded minus unbounded)."""
    from scipy import stats

    ok = ~(np.isnan(unbounded) | np.isnan(bounded))
    diff = bounded[ok] - unbounded[ok]
    out = {"n_windows": int(ok.sum()), "median_diff_deg": None, "p_value": None}
    if ok.sum() == 0:
        return out
    out["median_diff_deg"] = float(np.median(diff))
    if np.any(diff != 0):
        out["p_value"] = float(stats.wilcoxon(diff).pvalue)
    return out


def run_tracking_experiment(spec: ExperimentSpec, workers: int | None = None) -> Report:
    """Tracking error of one or both continuous models on the spec's trajectory.

    The paired model runs the unbounded and bounded rings on the same
    trajectory, currents and seed, so boundary modulation is the only
    difference.  A failed run is recorded with its seed and the rest go on.
    """
    if spec.model == "hw":
        raise ValueError("the hw model runs through hw_drift, hw_accel or hw_velocity_sweep")
    config = spec.config.with_seed(spec.seed)
    models = ["unbounded", "bounded"] if spec.model == "paired" else [spec.model]

    def job(model):
        try:
            return track(config, spec.trajectory, model == "bounded")
        except (SimulationError, ValueError) as exc:
            return exc

    results = dict(zip(models, parallel_map(job, models, workers)))
    metrics, failures = {}, []
    for model, res in results.items():
        if isinstance(res, Exception):
            failures.append({"model": model, "seed": spec.seed, "error": str(res)})
        else:
            metrics[model] = res.metrics()
    if len(metrics) == 2:
        u, b = results["unbounded"], results["bounded"]
        metrics["comparison"] = {
            "bounded_minus_unbounded_deg": b.mean_deg - u.mean_deg,
            "bounded_better": bool(b.mean_deg < u.mean_deg),
            **paired_window_test(u.windows, b.windows),
        }
    traj = spec.trajectory
    return Report(
        spec.name,
        metrics,
        config.to_dict(),
        spec.seed,
        trajectory={
            "kind": traj.kind,
            "label": traj.label,
            "duration_s": traj.duration,
            "initial_angle_rad": traj.initial_angle,
        },
        failures=failures,
    )


def paired_batch(
    config: Config, preset: str, seeds, workers: int | None = None
) -> list[Report]:
    """Paired bounded/unbounded runs on one ``preset`` trajectory per seed."""

    def job(seed):
        cfg = config.with_overrides(
            experiment={"trajectory": preset, "trajectory_seed": int(seed), "seed": int(seed)}
        )
        spec = ExperimentSpec(f"{preset}-{seed}", "paired", cfg, cfg.trajectory(), seed=int(seed))
        return run_tracking_experiment(spec, workers=1)

    return parallel_map(job, list(seeds), workers)


# ---------------------------------------------------------------- hardware


def hw_table(config: Config) -> ConnectionTable:
    return build_hw_ring(config.topology, config.gains)


@dataclass(frozen=True)
class DriftResult:
    window_starts: np.ndarray  # seconds after cue offset
    errors: np.ndarray  # [run, window] degrees, NaN where undecodable
    medians: np.ndarray

    @property
    def worst_median(self) -> float:
        return float(np.nanmax(self.medians))

    def to_dict(self) -> dict:
        return {
            "window_start_s": self.window_starts.tolist(),
            "median_deg": _nan_to_none(self.medians),
            "worst_median_deg": self.worst_median,
            "n_runs": int(self.errors.shape[0]),
        }


def hw_drift(config: Config, seeds=None, pops=None, workers: int | None = None) -> DriftResult:
    """Baseline runs from every cued population; error per window after the cue.

    Each run uses a different mismatch/noise seed.  The error is measured
    against the cued population's angle.
    """
    h = config.hw
    topo = config.topology
    table = hw_table(config)
    seeds = list(range(int(h["drift_seeds"]))) if seeds is None else list(seeds)
    pops = list(range(topo.n_pops)) if pops is None else list(pops)
    cue_dur = float(h["cue_duration"])
    span, window = float(h["drift_span"]), float(h["drift_window"])
    t_end = max(float(h["t_end"]), cue_dur + span)
    jobs = [(s, p) for s in seeds for p in pops]

    def job(item):
        s, p = item
        params = replace(config.hw_params, seed=config.seed + 1000 * p + s)
        raster = run_hw(topo, table, [], (p, cue_dur), t_end, params)
        trace = decode_hw(raster, topo, t_end=t_end)
        return drift_windows(trace, pop_angle(topo, p), window, cue_dur, cue_dur + span)

    errors = np.array(parallel_map(job, jobs, workers))
    with np.errstate(all="ignore"):
        medians = np.nanmedian(errors, axis=0)
    starts = np.arange(errors.shape[1]) * window
    return DriftResult(starts, errors, medians)


@dataclass(frozen=True)
class PhaseFit:
    t0: float
    t1: float
    count: int
    slope: float  # rad/s, NaN if the bump was lost

    def to_dict(self) -> dict:
        return {
            "t0": self.t0,
            "t1": self.t1,
            "count": self.count,
            "slope_rad_s": None if math.isnan(self.slope) else self.slope,
        }


@dataclass(frozen=True)
class AccelResult:
    phases: list[PhaseFit]
    trace: DecodedTrace

    def to_dict(self) -> dict:
        return {"phases": [p.to_dict() for p in self.phases]}


def three_phase_schedule(config: Config) -> list[tuple[float, int]]:
    h = config.hw
    return [
        (0.0, 0),
        (float(h["velocity_onset"]), int(h["accel_count"])),
        (float(h["accel_stop"]), 0),
    ]


def read_schedule(path) -> list[tuple[float, int]]:
    """CSV ``time_s,count`` (optional ``direction``); count 0 removes the connections.

    A negative count means the opposite direction.
    """
    import csv

    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"time_s", "count"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must include time_s,count")
        for row_no, row in enumerate(reader, start=1):
            try:
                t = float(row["time_s"])
                c = int(row["count"])
                d = int(row.get("direction") or 1)
            except (TypeError, ValueError):
                raise ValueError(f"{path}: row {row_no}: malformed {row}") from None
            if d not in (1, -1) or not math.isfinite(t):
                raise ValueError(f"{path}: row {row_no}: bad time or direction")
            out.append((t, c * d))
    if not out:
        raise ValueError(f"{path}: empty schedule")
    return out


def hw_accel(
    config: Config,
    schedule: list[tuple[float, int]] | None = None,
    settle: float = 0.5,
    t_end: float | None = None,
) -> AccelResult:
    """Run a velocity schedule and fit the bump slope within each phase.

    ``schedule`` holds ``(time, signed count)`` steps.  Each phase is fitted
    from ``settle`` seconds after its start to its end.
    """
    h = config.hw
    topo = config.topology
    schedule = three_phase_schedule(config) if schedule is None else list(schedule)
    t_end = float(h["t_end"]) if t_end is None else t_end
    table = hw_table(config)
    cue_pop, cue_dur = int(h["cue_population"]), float(h["cue_duration"])
    steps = []
    for t, c in schedule:
        vset = None if c == 0 else velocity_connections(topo, 1 if c > 0 else -1, abs(c))
        steps.append((t, vset))
    raster = run_hw(topo, table, steps, (cue_pop, cue_dur), t_end, config.hw_params)
    trace = decode_hw(raster, topo, t_end=t_end)
    bounds = [t for t, _ in schedule] + [t_end]
    phases = []
    for k, (t, c) in enumerate(schedule):
        lo, hi = t + settle, bounds[k + 1]
        window = (trace.times >= lo) & (trace.times <= hi)
        slope = math.nan
        if np.count_nonzero(window & trace.valid) >= max(3, 0.9 * np.count_nonzero(window)):
            slope = fit_bump_velocity(unwrap(trace), lo, hi).slope
        phases.append(PhaseFit(lo, hi, c, slope))
    return AccelResult(phases, trace)


def hw_velocity_sweep(config: Config, counts=None, repeats=None, workers=None):
    from .discrete_hw import velocity_sweep

    h = config.hw
    counts = h["counts"] if counts is None else counts
    repeats = int(h["repeats"]) if repeats is None else int(repeats)
    return velocity_sweep(
        config.topology,
        hw_table(config),
        counts,
        repeats,
        params=config.hw_params,
        onset=float(h["velocity_onset"]),
        cue_duration=float(h["cue_duration"]),
        fit_window=tuple(float(x) for x in h["fit_window"]),
        workers=workers,
    )


def summary_table(reports) -> str:
    """Plain-text table of model means/stds across report dicts."""
    rows = [("name", "model", "mean_deg", "std_deg")]
    for rep in reports:
        for model, m in rep.get("metrics", {}).items():
            if isinstance(m, dict) and "mean_deg" in m:
                rows.append(
                    (rep.get("name", "?"), model, f"{m['mean_deg']:.2f}", f"{m['std_deg']:.2f}")
                )
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)
