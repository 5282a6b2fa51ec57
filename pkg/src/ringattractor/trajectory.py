"""Joint trajectories: synthetic velocity-step generators and CSV import.

Synthetic trajectories are built from segments of constant velocity, so the
ground-truth angle at any time is an exact integral of the command.  Segment
durations are rounded to whole milliseconds, which keeps every velocity step
on the simulation grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .engine import VelocityProfile
from .ring import wrap

KINDS = ("synthetic-sine", "synthetic-trapezoid", "imported")
SAMPLE_DT = 0.010
DURATION_QUANTUM = 1e-3

# default joint range for the presets: a generic limited joint
DEFAULT_THETA_0 = 0.0
DEFAULT_THETA_L = 1.5 * math.pi


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    angles: np.ndarray  # continuous (not wrapped)
    velocities: np.ndarray  # command held from this sample to the next
    kind: str
    label: str = ""
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, float)
        a = np.asarray(self.angles, float)
        v = np.asarray(self.velocities, float)
        for name, arr in (("times", t), ("angles", a), ("velocities", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if t.ndim != 1 or len(t) == 0 or a.shape != t.shape or v.shape != t.shape:
            raise ValueError("trajectory needs matching nonempty 1-D arrays")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def samples(self) -> list[tuple[float, float, float]]:
        return list(
            zip(self.times.tolist(), self.angles.tolist(), self.velocities.tolist())
        )

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def initial_angle(self) -> float:
        return wrap(float(self.angles[0]))

    @property
    def truth(self) -> list[tuple[float, float]]:
        """``(time, wrapped angle)`` pairs with time measured from the first sample."""
        rel = self.times - self.start
        return list(zip(rel.tolist(), np.asarray(wrap(self.angles)).tolist()))

    def velocity_profile(self) -> VelocityProfile:
        """Zero-order-held command, time measured from the first sample."""
        rel = self.times - self.start
        keep = np.ones(len(rel), bool)
        keep[1:] = self.velocities[1:] != self.velocities[:-1]
        return VelocityProfile(rel[keep], self.velocities[keep])

    def integral_residual(self) -> float:
        """Largest gap between the angle and the integrated command (rad)."""
        steps = np.diff(self.times) * self.velocities[:-1]
        integral = self.angles[0] + np.concatenate([[0.0], np.cumsum(steps)])
        return float(np.max(np.abs(integral - self.angles)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time_s", "angle_rad", "velocity_rad_s"])
            for t, a, v in self.samples:
                wr.writerow([repr(t), repr(a), repr(v)])


def from_segments(
    initial_angle: float,
    segments,
    kind: str = "synthetic-trapezoid",
    label: str = "",
    sample_dt: float = SAMPLE_DT,
    params: dict | None = None,
) -> Trajectory:
    """Sample a piecewise-constant velocity command given as ``(duration, v)`` pairs.

    Samples fall every ``sample_dt`` and at every segment boundary.  Angles
    are accumulated segment by segment, so they equal the exact integral of
    the command.
    """
    segs = [(float(d), float(v)) for d, v in segments]
    if not segs:
        raise ValueError("need at least one segment")
    if any(not d > 0 or not math.isfinite(d) or not math.isfinite(v) for d, v in segs):
        raise ValueError("segment durations must be positive and values finite")
    t_seg = np.concatenate([[0.0], np.cumsum([d for d, _ in segs])])
    a_seg = float(initial_angle) + np.concatenate(
        [[0.0], np.cumsum([d * v for d, v in segs])]
    )
    grid = np.arange(0.0, t_seg[-1], sample_dt)
    # grid points within rounding distance of a boundary give way to it
    pos = np.clip(np.searchsorted(t_seg, grid), 1, len(t_seg) - 1)
    near = np.minimum(np.abs(grid - t_seg[pos - 1]), np.abs(grid - t_seg[pos]))
    times = np.union1d(grid[near > 1e-9], t_seg)
    idx = np.clip(np.searchsorted(t_seg, times, side="right") - 1, 0, len(segs) - 1)
    vel = np.array([v for _, v in segs])[idx]
    angles = a_seg[idx] + vel * (times - t_seg[idx])
    return Trajectory(times, angles, vel, kind, label, dict(params or {}))


def _quantize(d: float) -> float:
    return max(DURATION_QUANTUM, round(d / DURATION_QUANTUM) * DURATION_QUANTUM)


def _move(cur: float, target: float, speed: float) -> tuple[float, float]:
    """Constant-velocity segment from ``cur`` to exactly ``target``."""
    dur = _quantize(abs(target - cur) / speed)
    return dur, (target - cur) / dur


def _limits(params: dict) -> tuple[float, float]:
    lo = float(params.get("theta_0", DEFAULT_THETA_0))
    hi = float(params.get("theta_l", DEFAULT_THETA_L))
    if not 0.0 <= lo < hi < 2 * math.pi:
        raise ValueError(f"need 0 <= theta_0 < theta_l < 2pi, got {lo}, {hi}")
    return lo, hi


def _preset_segments(preset: str, params: dict) -> tuple[float, list]:
    """Random step-velocity sweeps for the ``wide`` and ``limited`` presets.

    ``wide`` alternates full sweeps between the two limits; ``limited``
    wanders between random targets in the middle half of the range.  Both
    start somewhere in the middle 40%, hold for a random dwell after every
    move and finish with a move back into the interior.
    """
    lo, hi = _limits(params)
    span = hi - lo
    rng = np.random.default_rng(int(params.get("seed", 0)))
    sweeps = int(params.get("sweeps", 10))
    v_min, v_max = float(params.get("v_min", 0.4)), float(params.get("v_max", 1.0))
    d_min, d_max = float(params.get("dwell_min", 0.2)), float(params.get("dwell_max", 0.8))
    if sweeps < 1 or not 0 < v_min <= v_max or not 0 <= d_min <= d_max:
        raise ValueError("need sweeps >= 1, 0 < v_min <= v_max, 0 <= dwell_min <= dwell_max")

    start = rng.uniform(lo + 0.3 * span, lo + 0.7 * span)
    if preset == "wide":
        targets = [hi if rng.random() < 0.5 else lo]
        for _ in range(sweeps):
            targets.append(lo if targets[-1] == hi else hi)
    elif preset == "limited":
        inner_lo, inner_hi = lo + 0.25 * span, hi - 0.25 * span
        targets, cur = [], start
        while len(targets) < sweeps + 1:
            tg = rng.uniform(inner_lo, inner_hi)
            # skip tiny moves
            if abs(tg - cur) >= 0.15 * span:
                targets.append(tg)
                cur = tg
    else:
        raise ValueError(f"unknown preset {preset!r}; use 'wide' or 'limited'")
    targets.append(rng.uniform(lo + 0.3 * span, lo + 0.7 * span))

    # the opening hold covers the initialization pulse
    segs = [(_quantize(rng.uniform(0.3, 0.8)), 0.0)]
    cur = start
    for tg in targets:
        segs.append(_move(cur, tg, rng.uniform(v_min, v_max)))
        cur = tg
        segs.append((_quantize(rng.uniform(d_min, d_max)), 0.0))
    return start, segs


def _check_range(traj: Trajectory, lo: float, hi: float, tol: float = 1e-9) -> None:
    a_min, a_max = float(traj.angles.min()), float(traj.angles.max())
    if a_min < lo - tol or a_max > hi + tol:
        raise ValueError(
            f"trajectory spans [{a_min:.6g}, {a_max:.6g}] rad, "
            f"outside the joint range [{lo:.6g}, {hi:.6g}]"
        )


def make_trajectory(kind: str, params: dict | None = None) -> Trajectory:
    """Build a synthetic trajectory.

    ``synthetic-trapezoid`` takes either ``preset`` ("wide" or "limited",
    with optional ``seed``, ``sweeps``, ``v_min``, ``v_max``, ``dwell_min``,
    ``dwell_max``, ``theta_0``, ``theta_l``) or explicit ``segments`` as
    ``(duration, velocity)`` pairs with ``initial_angle``.  Explicit
    segments are range-checked when ``theta_0``/``theta_l`` are given.

    ``synthetic-sine`` takes ``center``, ``amplitude``, ``period``,
    ``duration`` and optional ``hold`` (leading zero-velocity time).  The
    command is the secant slope between knots every ``sample_dt``, so the
    angle hits the sine exactly at each knot.
    """
    params = dict(params or {})
    if kind == "synthetic-trapezoid":
        if "segments" in params:
            start = float(params.get("initial_angle", 0.0))
            segs = [(_quantize(d), v) for d, v in params["segments"]]
            traj = from_segments(start, segs, kind, "segments", params=params)
            if "theta_0" in params or "theta_l" in params:
                _check_range(traj, *_limits(params))
            return traj
        preset = params.get("preset", "wide")
        start, segs = _preset_segments(preset, params)
        traj = from_segments(start, segs, kind, preset, params=params)
        _check_range(traj, *_limits(params))
        return traj
    if kind == "synthetic-sine":
        center = float(params.get("center", 0.75 * math.pi))
        amp = float(params.get("amplitude", 0.5 * math.pi))
        period = float(params.get("period", 4.0))
        duration = float(params.get("duration", 8.0))
        hold = _quantize(float(params.get("hold", 0.3)))
        step = float(params.get("sample_dt", SAMPLE_DT))
        if period <= 0 or duration <= 0 or amp < 0:
            raise ValueError("need period > 0, duration > 0, amplitude >= 0")
        knots = np.arange(0.0, duration + step / 2, step)
        shape = center + amp * np.sin(2 * math.pi * knots / period)
        segs = [(hold, 0.0)] + [
            (step, (b - a) / step) for a, b in zip(shape[:-1], shape[1:])
        ]
        traj = from_segments(center, segs, kind, "sine", sample_dt=step, params=params)
        if "theta_0" in params or "theta_l" in params:
            _check_range(traj, *_limits(params))
        return traj
    if kind == "imported":
        raise ValueError("use import_trajectory for recorded trajectories")
    raise ValueError(f"unknown trajectory kind {kind!r}")


def import_trajectory(path) -> Trajectory:
    """Read a ``time_s,angle_rad,velocity_rad_s`` CSV.

    Times must be strictly increasing and every value finite.  The angle
    column is not checked against the integrated velocity.
    """
    cols = ("time_s", "angle_rad", "velocity_rad_s")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(cols):
            raise ValueError(f"{path}: header must be {','.join(cols)}")
        rows = []
        # row numbers count data rows from 1, matching a spreadsheet below the header
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}: row {row_no}: expected 3 fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ValueError(f"{path}: row {row_no}: non-numeric value in {row}") from None
            for name, x in zip(cols, vals):
                if not math.isfinite(x):
                    raise ValueError(f"{path}: row {row_no}: {name} is not finite")
            if rows and vals[0] <= rows[-1][0]:
                raise ValueError(
                    f"{path}: row {row_no}: time {vals[0]} does not increase "
                    f"(previous {rows[-1][0]})"
                )
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    t, a, v = (np.array(c) for c in zip(*rows))
    return Trajectory(t, a, v, "imported", str(path))
