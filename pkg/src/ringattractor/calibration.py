"""Two-stage tuning of the ring.

A coarse grid over currents (and optionally the symmetric gains) picks a
configuration that holds a stationary bump near the target rate.  A
finite-difference descent on ``g_sin`` then matches decoded bump velocity to
the commanded velocity.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .decoder import (
    decode_trace,
    fit_bump_velocity,
    slope_through_origin,
    tracking_error,
    unwrap,
)
from .engine import (
    SimConfig,
    SimulationError,
    VelocityProfile,
    make_config,
    mean_rate_profile,
    run,
)
from .parallel import parallel_map
from .ring import GainSet, build_weights, wrap_diff

SENTINEL_LOSS = 1e6
DEAD_PENALTY = 1e3
DEFAULT_BUDGET = 2000
GRID_PARAMS = ("g_inh", "g_cos", "g_sin", "i_bg", "init_current", "recurrent_scale")
DEFAULT_SPACE = {
    "i_bg": (3.5, 5.5, 5),
    "init_current": (1.0, 3.0, 5),
    "recurrent_scale": (4.0, 8.0, 5),
}
# used when the symmetric gains join the grid
GAIN_SPACE = {"g_inh": (-20.0, -13.0, 5), "g_cos": (12.5, 19.5, 5)}
IBG_GRID = tuple(np.round(np.arange(1.1, 6.01, 0.1), 2))
SCALE_GRID = (2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0)
# peak-rate tolerance for background currents entering the joint search
RATE_BAND = 0.1
# current search: one short screening trajectory, then the best few pairs
# on full-length wide trajectories; seeds are disjoint from evaluation seeds
SCREEN_SEED = 1000
SCREEN_SWEEPS = 2
SCREEN_KEEP = 6
FULL_SEEDS = (1001, 1002)


@dataclass(frozen=True)
class CalibrationObjective:
    target_peak_rate: float = 100.0
    stationary_tolerance_deg: float = 5.0
    velocity_set: tuple[float, ...] = (-1.0, -0.5, -0.2, 0.2, 0.5, 1.0)
    # rate, stability, velocity match
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    stationary_duration: float = 0.9
    probe_duration: float = 2.0
    probe_fit_start: float = 0.3

    def __post_init__(self):
        vs = tuple(float(v) for v in self.velocity_set)
        object.__setattr__(self, "velocity_set", vs)
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
        if any(v == 0 for v in vs):
            raise ValueError("probe velocities must be nonzero")
        if not (any(v > 0 for v in vs) and any(v < 0 for v in vs)):
            raise ValueError("probe velocities must include both signs")
        if len(self.loss_weights) != 3:
            raise ValueError("loss_weights needs (rate, stability, velocity)")
        if any(w < 0 for w in self.loss_weights) or not any(self.loss_weights):
            raise ValueError("loss weights must be nonnegative and not all zero")
        if self.target_peak_rate <= 0 or self.stationary_tolerance_deg <= 0:
            raise ValueError("target rate and tolerance must be positive")
        if not self.probe_duration > self.probe_fit_start + 0.1:
            raise ValueError("probe_duration too short for the fit window")


@dataclass(frozen=True)
class ProbeFit:
    velocity: float
    fitted: float  # NaN when the bump died
    stderr: float

    @property
    def rel_error(self) -> float:
        return (self.fitted - self.velocity) / abs(self.velocity)


@dataclass(frozen=True)
class CalibrationResult:
    gains: GainSet
    i_bg: float
    init_current: float
    loss: float
    recurrent_scale: float = 6.0
    velocity_gain_kappa: float = math.nan
    kappa_stderr: float = math.nan
    diagnostics: tuple[ProbeFit, ...] = ()
    grid_index: int = 0
    converged: bool = True
    warning: str | None = None

    def apply(self, cfg: SimConfig) -> SimConfig:
        """``cfg`` with this result's gains and currents."""
        return cfg.with_gains(self.gains).with_currents(
            self.i_bg, self.recurrent_scale, self.init_current
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["diagnostics"] = [
            {**asdict(p), "rel_error": p.rel_error} for p in self.diagnostics
        ]
        return d


@dataclass(frozen=True)
class StationaryStats:
    error_deg: float
    peak_rate: float
    dead: bool


def stationary_stats(cfg: SimConfig, obj: CalibrationObjective) -> StationaryStats:
    """Zero-velocity run: mean decoded error, peak rate and bump survival."""
    t_end = obj.stationary_duration
    raster, _ = run(cfg, VelocityProfile.constant(0.0), t_end)
    trace = decode_trace(raster, cfg.geometry, t_end=t_end)
    tail = trace.times > t_end - 0.1
    dead = not trace.valid[tail].all() if tail.any() else True
    if trace.valid.any():
        err = np.degrees(np.abs(wrap_diff(trace.angles[trace.valid], cfg.init_angle)))
        error_deg = float(err.mean())
    else:
        error_deg = 180.0
    t0 = min(cfg.init_duration + 0.2, t_end / 2)
    peak = float(mean_rate_profile(raster, t0, t_end, cfg.n).max())
    return StationaryStats(error_deg, peak, dead)


def stationarity_loss(cfg: SimConfig, obj: CalibrationObjective) -> float:
    """Weighted rate and stability terms plus a penalty for a dead bump.

    A simulation that blows up scores ``SENTINEL_LOSS``.
    """
    try:
        st = stationary_stats(cfg, obj)
    except SimulationError:
        return SENTINEL_LOSS
    w_rate, w_stab, _ = obj.loss_weights
    rate_term = ((st.peak_rate - obj.target_peak_rate) / obj.target_peak_rate) ** 2
    loss = w_rate * rate_term + w_stab * st.error_deg / obj.stationary_tolerance_deg
    if st.dead:
        loss += DEAD_PENALTY
    return float(loss)


def velocity_probe(cfg: SimConfig, v: float, obj: CalibrationObjective) -> ProbeFit:
    """Fitted bump velocity under a constant command ``v``."""
    try:
        raster, _ = run(cfg, VelocityProfile.constant(v), obj.probe_duration)
        trace = decode_trace(raster, cfg.geometry, t_end=obj.probe_duration)
        sel = trace.times >= obj.probe_fit_start
        if trace.valid[sel].mean() < 0.9:
            return ProbeFit(v, math.nan, math.nan)
        fit = fit_bump_velocity(unwrap(trace), obj.probe_fit_start, obj.probe_duration)
    except (SimulationError, ValueError):
        return ProbeFit(v, math.nan, math.nan)
    return ProbeFit(v, fit.slope, fit.slope_stderr)


def velocity_probes(
    cfg: SimConfig, obj: CalibrationObjective, workers: int | None = None
) -> tuple[ProbeFit, ...]:
    return tuple(parallel_map(lambda v: velocity_probe(cfg, v, obj), obj.velocity_set, workers))


def velocity_match_loss(probes) -> float:
    """Sum of squared velocity errors (rad/s)^2; a dead probe scores the sentinel."""
    if any(math.isnan(p.fitted) for p in probes):
        return SENTINEL_LOSS
    return float(sum((p.fitted - p.velocity) ** 2 for p in probes))


def kappa(probes) -> tuple[float, float]:
    """Slope through the origin of fitted vs commanded velocity."""
    live = [p for p in probes if not math.isnan(p.fitted)]
    if not live:
        return math.nan, math.nan
    return slope_through_origin([p.velocity for p in live], [p.fitted for p in live])


def _axis_values(spec) -> list[float]:
    if isinstance(spec, dict):
        if "values" in spec:
            return [float(x) for x in spec["values"]]
        spec = (spec["min"], spec["max"], int(spec.get("steps", 5)))
    if isinstance(spec, (int, float)):
        return [float(spec)]
    if isinstance(spec, tuple):
        lo, hi, steps = spec
        if steps < 1:
            raise ValueError("steps must be at least 1")
        if steps == 1:
            return [float(lo)]
        return [float(x) for x in np.linspace(lo, hi, steps)]
    return [float(x) for x in spec]


def expand_space(space) -> tuple[list[str], list[tuple[float, ...]]]:
    """Parameter names and the grid points, in row-major order.

    Each axis is a ``(lo, hi, steps)`` tuple, a ``{"min", "max", "steps"}``
    table, a list (or ``{"values": [...]}``) of explicit values, or a number.
    """
    if not space:
        raise ValueError("search space is empty")
    names = list(space)
    bad = [n for n in names if n not in GRID_PARAMS]
    if bad:
        raise ValueError(f"unknown grid parameters {bad}; allowed {GRID_PARAMS}")
    axes = [_axis_values(space[n]) for n in names]
    if any(not a for a in axes):
        raise ValueError("every axis needs at least one value")
    return names, list(itertools.product(*axes))


def configure(base: SimConfig, params: dict) -> SimConfig:
    """``base`` with grid parameters substituted."""
    g = base.gains
    gain_kw = {k: params[k] for k in ("g_inh", "g_cos", "g_sin") if k in params}
    cfg = base.with_gains(replace(g, **gain_kw)) if gain_kw else base
    return cfg.with_currents(
        params.get("i_bg"), params.get("recurrent_scale"), params.get("init_current")
    )


def _result(cfg: SimConfig, loss: float, index: int, **kw) -> CalibrationResult:
    return CalibrationResult(
        gains=cfg.gains,
        i_bg=cfg.neuron.i_bg,
        init_current=cfg.init_current,
        recurrent_scale=cfg.recurrent_scale,
        loss=loss,
        grid_index=index,
        **kw,
    )


def grid_search(
    space,
    obj: CalibrationObjective = CalibrationObjective(),
    base: SimConfig | None = None,
    budget: int = DEFAULT_BUDGET,
    workers: int | None = None,
) -> list[CalibrationResult]:
    """Evaluate ``stationarity_loss`` on every grid point, best first.

    Ties keep grid order.  Points with invalid parameters (e.g. a
    nonnegative ``g_inh``) score the sentinel loss.
    """
    base = base or make_config()
    names, points = expand_space(space)
    if len(points) > budget:
        raise ValueError(f"grid has {len(points)} points, budget is {budget}")

    def evaluate(item):
        idx, values = item
        try:
            cfg = configure(base, dict(zip(names, values)))
        except ValueError:
            return _result(base, SENTINEL_LOSS, idx, warning="invalid parameters")
        return _result(cfg, stationarity_loss(cfg, obj), idx)

    results = parallel_map(evaluate, list(enumerate(points)), workers)
    return sorted(results, key=lambda r: (r.loss, r.grid_index))


def refine_gsin(
    base: CalibrationResult,
    obj: CalibrationObjective = CalibrationObjective(),
    template: SimConfig | None = None,
    *,
    max_iter: int = 12,
    fd_rel_step: float = 0.05,
    tol: float = 1e-3,
    max_backtrack: int = 6,
    workers: int | None = None,
) -> CalibrationResult:
    """Central finite-difference descent on ``g_sin`` with backtracking.

    The step is the gradient scaled by the finite-difference curvature when
    that is positive, halved until the velocity-match loss decreases.  The
    returned candidate never scores worse than ``base``.
    """
    template = template or make_config()
    cfg0 = base.apply(template)
    if stationary_stats(cfg0, obj).dead:
        raise ValueError("base configuration does not hold a bump")

    cache: dict[float, tuple[float, tuple[ProbeFit, ...]]] = {}

    def evaluate(g: float):
        if g not in cache:
            probes = velocity_probes(cfg0.with_gains(replace(cfg0.gains, g_sin=g)), obj, workers)
            cache[g] = (velocity_match_loss(probes), probes)
        return cache[g]

    g = base.gains.g_sin
    loss, _ = evaluate(g)
    converged, warning = False, None
    for _ in range(max_iter):
        h = fd_rel_step * g
        lp, _ = evaluate(g + h)
        lm, _ = evaluate(g - h)
        grad = (lp - lm) / (2 * h)
        curv = (lp - 2 * loss + lm) / h**2
        if grad == 0:
            converged = True
            break
        step = -grad / curv if curv > 0 else -math.copysign(2 * h, grad)
        # never more than halve or double in one move
        step = float(np.clip(step, -0.5 * g, g))
        accepted = False
        t = 1.0
        for _ in range(max_backtrack):
            cand = g + t * step
            if cand > 0:
                lc, _ = evaluate(cand)
                if lc < loss:
                    accepted = True
                    break
            t /= 2
        if not accepted:
            converged = True
            break
        moved = abs(cand - g)
        g, loss = cand, lc
        if moved < tol * g:
            converged = True
            break
    else:
        warning = f"no convergence after {max_iter} iterations"

    # best of everything evaluated, which includes the starting point
    g_best = min(cache, key=lambda x: (cache[x][0], abs(x - base.gains.g_sin)))
    loss_best, probes = cache[g_best]
    k, k_err = kappa(probes)
    return replace(
        base,
        gains=replace(base.gains, g_sin=g_best),
        loss=loss_best,
        velocity_gain_kappa=k,
        kappa_stderr=k_err,
        diagnostics=probes,
        converged=converged,
        warning=warning,
    )


def calibration_trajectory(
    cfg: SimConfig | None = None, seed: int = SCREEN_SEED, sweeps: int | None = SCREEN_SWEEPS
):
    """Wide-range trajectory used to score currents (``sweeps=None``: full preset).

    Calibration seeds are kept apart from the evaluation seeds so currents
    are never tuned on the trajectories they are judged on.
    """
    from .trajectory import make_trajectory

    params = {"preset": "wide", "seed": seed}
    if sweeps is not None:
        params["sweeps"] = sweeps
    if cfg is not None and cfg.weights.boundary is not None:
        params.update(theta_0=cfg.weights.boundary.theta_0, theta_l=cfg.weights.boundary.theta_l)
    return make_trajectory("synthetic-trapezoid", params)


def current_loss(cfg: SimConfig, obj: CalibrationObjective, trajectories, track_cfg=None) -> float:
    """Stationarity loss plus mean tracking error over ``trajectories`` (gains fixed).

    The tracking term, in units of the stationary tolerance, catches a bump
    that is stable at rest but pinned to the neuron lattice under motion.
    It runs on ``track_cfg`` (default ``cfg``), which must share the currents.
    """
    loss = stationarity_loss(cfg, obj)
    w_vel = obj.loss_weights[2]
    if loss >= DEAD_PENALTY or w_vel == 0:
        return loss
    track_cfg = track_cfg or cfg
    try:
        err = float(np.mean([track_error(track_cfg, t) for t in trajectories]))
    except (SimulationError, ValueError):
        return loss + DEAD_PENALTY
    return loss + w_vel * err / obj.stationary_tolerance_deg


def recalibrate_currents(
    cfg: SimConfig,
    obj: CalibrationObjective = CalibrationObjective(),
    i_bg_grid=IBG_GRID,
    scale_grid=SCALE_GRID,
    *,
    track_cfg: SimConfig | None = None,
    keep: int = SCREEN_KEEP,
    workers: int | None = None,
) -> SimConfig:
    """Search background current and recurrent scale with the gains fixed.

    Tracking scores are rugged in the currents (the bump mode-locks to the
    neuron lattice at some speeds), so the search runs in three passes:

    1. background currents whose stationary peak on ``cfg`` lands within
       ``RATE_BAND`` of the target rate;
    2. every (current, scale) pair scored on a short screening trajectory;
    3. the best ``keep`` pairs rescored on full-length wide trajectories.

    Tracking runs on ``track_cfg`` (default ``cfg``) with the candidate
    currents.  Ties keep grid order.
    """
    track_cfg = track_cfg or cfg

    def rate_check(x):
        try:
            return stationary_stats(cfg.with_currents(i_bg=x), obj)
        except SimulationError:
            return None

    stats = parallel_map(rate_check, list(i_bg_grid), workers)
    live = [(x, st) for x, st in zip(i_bg_grid, stats) if st is not None and not st.dead]
    if not live:
        raise ValueError("no background current in the grid holds a bump")
    rel = [abs(st.peak_rate / obj.target_peak_rate - 1.0) for _, st in live]
    cands = [x for (x, _), r in zip(live, rel) if r <= RATE_BAND] or [live[int(np.argmin(rel))][0]]
    jobs = list(itertools.product(cands, scale_grid))

    def score(pair, trajs):
        return current_loss(
            cfg.with_currents(*pair), obj, trajs, track_cfg.with_currents(*pair)
        )

    screen = [calibration_trajectory(track_cfg)]
    screened = parallel_map(lambda j: score(j, screen), jobs, workers)
    order = sorted(range(len(jobs)), key=lambda k: (screened[k], k))[:keep]
    full = [calibration_trajectory(track_cfg, seed, None) for seed in FULL_SEEDS]
    finals = parallel_map(lambda k: score(jobs[k], full), order, workers)
    best = order[int(np.argmin(finals))]
    return cfg.with_currents(*jobs[best])


@dataclass(frozen=True)
class RobustnessRow:
    value: float
    mean_abs_error_deg: float
    i_bg: float = math.nan
    recurrent_scale: float = math.nan
    error: str | None = None


def robustness_sweep(
    param: str,
    values,
    obj: CalibrationObjective = CalibrationObjective(),
    *,
    base: SimConfig | None = None,
    trajectory=None,
    recalibrate: bool = True,
    workers: int | None = None,
) -> list[RobustnessRow]:
    """Tracking error on a fixed trajectory as ring size or rate scale varies.

    ``rate_scale`` multiplies the target peak rate before the currents are
    recalibrated; ``n_neurons`` rebuilds the ring at that size.  Gains are
    never changed.  A failing point is recorded and the sweep continues.
    """
    from .trajectory import make_trajectory

    if param not in ("n_neurons", "rate_scale"):
        raise ValueError("param must be 'n_neurons' or 'rate_scale'")
    values = list(values)
    if not values:
        raise ValueError("values must be nonempty")
    base = base or make_config()
    traj = trajectory or make_trajectory("synthetic-trapezoid", {"preset": "wide", "seed": 0})
    rows = []
    for value in values:
        try:
            if param == "n_neurons":
                cfg = make_config(
                    n=int(value),
                    gains=base.gains,
                    boundary=base.weights.boundary,
                    neuron=base.neuron,
                    synapse=base.synapse,
                    dt=base.dt,
                    init_current=base.init_current,
                    init_duration=base.init_duration,
                    recurrent_scale=base.recurrent_scale,
                    seed=base.seed,
                )
                point_obj = obj
            else:
                if value <= 0:
                    raise ValueError("rate_scale must be positive")
                cfg = base
                point_obj = replace(obj, target_peak_rate=obj.target_peak_rate * value)
            if recalibrate:
                # calibration runs on the unbounded ring, tracking on the requested one
                free = _unbounded(cfg) if cfg.weights.bounded else cfg
                tuned = recalibrate_currents(free, point_obj, track_cfg=cfg, workers=workers)
                cfg = cfg.with_currents(tuned.neuron.i_bg, tuned.recurrent_scale)
            err = track_error(cfg, traj)
            rows.append(RobustnessRow(float(value), err, cfg.neuron.i_bg, cfg.recurrent_scale))
        except (SimulationError, ValueError) as exc:
            rows.append(RobustnessRow(float(value), math.nan, error=str(exc)))
    return rows


def _unbounded(cfg: SimConfig) -> SimConfig:
    return replace(cfg, weights=build_weights(cfg.geometry, cfg.gains, None))


def track_error(cfg: SimConfig, traj) -> float:
    """Mean tracking error (deg) of ``cfg`` driven by ``traj``'s velocities."""
    cfg = replace(cfg, init_angle=traj.initial_angle)
    raster, _ = run(cfg, traj.velocity_profile(), traj.duration)
    trace = decode_trace(raster, cfg.geometry, t_end=traj.duration)
    return tracking_error(trace, traj.truth).mean_deg


def save_report(path, results, refined: CalibrationResult | None = None, top: int = 20) -> None:
    """JSON report: refined result (if any) and the grid leaderboard."""
    doc = {
        "best": (refined or results[0]).to_dict() if (refined or results) else None,
        "leaderboard": [r.to_dict() for r in results[:top]],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and math.isnan(o):
        return None
    raise TypeError(f"cannot serialize {type(o).__name__}")
