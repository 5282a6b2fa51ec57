"""Population-vector readout of the bump and the error/velocity metrics built on it."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .engine import SpikeRaster
from .ring import RingGeometry, wrap, wrap_diff

DEFAULT_WINDOW = 0.050
DEFAULT_DT_OUT = 0.010
# resultant shorter than this fraction of the spike count is "no direction"
DEGENERATE_FRACTION = 1e-9


@dataclass(frozen=True)
class DecodedTrace:
    times: np.ndarray
    angles: np.ndarray  # NaN where invalid
    valid: np.ndarray

    def __post_init__(self):
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trace times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def samples(self) -> list[tuple[float, float, bool]]:
        return list(zip(self.times.tolist(), self.angles.tolist(), self.valid.tolist()))

    def rotated(self, delta: float) -> "DecodedTrace":
        ang = np.where(self.valid, wrap(self.angles + delta), np.nan)
        return DecodedTrace(self.times, ang, self.valid)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time_s", "angle_rad", "valid"])
            for t, a, ok in self.samples:
                wr.writerow([repr(t), repr(a) if ok else "", int(ok)])

    @classmethod
    def from_csv(cls, path) -> "DecodedTrace":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        valid = np.array([r["valid"] in ("1", "True", "true") for r in rows], dtype=bool)
        angles = np.array(
            [float(r["angle_rad"]) if ok else np.nan for r, ok in zip(rows, valid)]
        )
        return cls(np.array([float(r["time_s"]) for r in rows]), angles, valid)


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float
    n_points: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def pva_angle(counts: np.ndarray, geom: RingGeometry) -> tuple[float, bool]:
    """Direction of the count-weighted sum of preferred-angle unit vectors."""
    total = counts.sum()
    if total <= 0:
        return math.nan, False
    th = geom.preferred_angles
    y = float(np.dot(counts, np.sin(th)))
    x = float(np.dot(counts, np.cos(th)))
    if math.hypot(x, y) < DEGENERATE_FRACTION * total:
        return math.nan, False
    return wrap(math.atan2(y, x)), True


def decode_pva(
    raster: SpikeRaster,
    geom: RingGeometry,
    t: float,
    window: float = DEFAULT_WINDOW,
    method: str = "pva",
) -> tuple[float, bool]:
    """Decode the bump angle from spikes in ``[t - window, t)``.

    ``method="argmax"`` returns the preferred angle of the most active neuron
    instead (lowest index on ties).
    """
    if not window > 0:
        raise ValueError("window must be positive")
    counts = raster.counts(t - window, t)
    if method == "argmax":
        if counts.sum() == 0:
            return math.nan, False
        return float(geom.preferred_angles[int(np.argmax(counts))]), True
    if method != "pva":
        raise ValueError(f"unknown decoding method {method!r}")
    return pva_angle(counts, geom)


def decode_trace(
    raster: SpikeRaster,
    geom: RingGeometry,
    dt_out: float = DEFAULT_DT_OUT,
    window: float = DEFAULT_WINDOW,
    t_start: float | None = None,
    t_end: float | None = None,
    method: str = "pva",
) -> DecodedTrace:
    """Sample ``decode_pva`` every ``dt_out`` from ``t_start`` to ``t_end``.

    Defaults cover the raster: the first sample sits one ``dt_out`` in and
    the last at the final spike time.
    """
    if not dt_out > 0:
        raise ValueError("dt_out must be positive")
    if t_start is None:
        t_start = dt_out
    if t_end is None:
        t_end = float(raster.times[-1]) if len(raster) else t_start
    n_out = int(math.floor((t_end - t_start) / dt_out + 1e-9)) + 1
    times = t_start + dt_out * np.arange(max(n_out, 1))
    angles = np.full(len(times), np.nan)
    valid = np.zeros(len(times), dtype=bool)
    for k, t in enumerate(times):
        a, ok = decode_pva(raster, geom, float(t), window, method)
        angles[k], valid[k] = a, ok
    return DecodedTrace(times, angles, valid)


def unwrap(trace: DecodedTrace) -> tuple[np.ndarray, np.ndarray]:
    """Continuous angle over the valid samples (invalid ones are dropped)."""
    if not trace.valid.any():
        raise ValueError("trace has no valid samples")
    return trace.times[trace.valid], np.unwrap(trace.angles[trace.valid])


def _r_squared(resid_ss: float, total_ss: float) -> float:
    if total_ss <= 0:
        return 1.0 if resid_ss <= 1e-24 else 0.0
    return float(min(1.0, max(0.0, 1.0 - resid_ss / total_ss)))


def ols_fit(x, y) -> LinearFit:
    return _wls(np.asarray(x, float), np.asarray(y, float), np.ones(len(x)))


def _wls(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> LinearFit:
    n = len(x)
    if n < 3:
        raise ValueError(f"need at least 3 points for a line fit, got {n}")
    sw = w.sum()
    xm = np.dot(w, x) / sw
    ym = np.dot(w, y) / sw
    sxx = np.dot(w, (x - xm) ** 2)
    if sxx <= 0:
        raise ValueError("x values are all identical")
    slope = np.dot(w, (x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    rss = float(np.dot(w, resid**2))
    tss = float(np.dot(w, (y - ym) ** 2))
    # residual-variance scaled standard error (weights are relative)
    stderr = math.sqrt(rss / (n - 2) / sxx)
    return LinearFit(float(slope), float(intercept), _r_squared(rss, tss), stderr, n)


def fit_bump_velocity(unwrapped, t0: float, t1: float) -> LinearFit:
    """OLS slope (rad/s) of an unwrapped angle trace restricted to ``[t0, t1]``."""
    times, angles = unwrapped
    times = np.asarray(times, float)
    angles = np.asarray(angles, float)
    sel = (times >= t0) & (times <= t1)
    if sel.sum() < 3:
        raise ValueError(f"fewer than 3 samples in [{t0}, {t1}]")
    return ols_fit(times[sel], angles[sel])


def weighted_linear_fit(points) -> LinearFit:
    """Weighted least squares with weights ``1 / sem**2`` per point."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be (x, y, sem) triples")
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points, got {len(pts)}")
    if np.any(pts[:, 2] <= 0):
        raise ValueError("all sem values must be positive")
    return _wls(pts[:, 0], pts[:, 1], 1.0 / pts[:, 2] ** 2)


def slope_through_origin(x, y) -> tuple[float, float]:
    """Least-squares slope of ``y = k x`` and its standard error."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    sxx = np.dot(x, x)
    k = np.dot(x, y) / sxx
    if len(x) > 1:
        resid = y - k * x
        stderr = math.sqrt(np.dot(resid, resid) / (len(x) - 1) / sxx)
    else:
        stderr = math.inf
    return float(k), stderr


def drift_windows(
    trace: DecodedTrace,
    target: float,
    window: float = 0.5,
    t_start: float = 0.0,
    t_end: float = 5.0,
) -> np.ndarray:
    """Mean ``|angle - target|`` in degrees per contiguous window.

    Windows holding no valid sample come back as NaN.
    """
    if not window > 0 or not t_end > t_start:
        raise ValueError("need window > 0 and t_end > t_start")
    n_win = int(math.floor((t_end - t_start) / window + 1e-9))
    out = np.full(n_win, np.nan)
    err = np.degrees(np.abs(wrap_diff(trace.angles, target)))
    for k in range(n_win):
        lo = t_start + k * window
        sel = trace.valid & (trace.times >= lo) & (trace.times < lo + window)
        if sel.any():
            out[k] = float(err[sel].mean())
    return out


@dataclass(frozen=True)
class TrackingError:
    mean_deg: float
    std_deg: float
    windows: np.ndarray  # mean error per 1 s bin, NaN when empty
    errors_deg: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mean_deg": self.mean_deg,
            "std_deg": self.std_deg,
            "window_mean_deg": [None if np.isnan(w) else float(w) for w in self.windows],
        }


def interpolate_angle(times, angles, t) -> np.ndarray:
    """Linear interpolation along the unwrapped curve, wrapped back to ``[0, 2pi)``."""
    return wrap(np.interp(t, times, np.unwrap(np.asarray(angles, float))))


def tracking_error(trace: DecodedTrace, truth, bin_width: float = 1.0) -> TrackingError:
    """Error of the decoded trace against a ``(time, angle)`` ground truth."""
    tt, ta = (np.asarray(a, float) for a in zip(*truth))
    sel = trace.valid & (trace.times >= tt[0]) & (trace.times <= tt[-1])
    if not sel.any():
        raise ValueError("trace and truth do not overlap")
    times = trace.times[sel]
    ref = interpolate_angle(tt, ta, times)
    err = np.degrees(np.abs(wrap_diff(trace.angles[sel], ref)))
    edges = np.arange(0.0, math.floor(times[-1] / bin_width) + 1) * bin_width
    bins = np.floor(times / bin_width).astype(int)
    windows = np.full(len(edges), np.nan)
    for b in range(len(edges)):
        m = bins == b
        if m.any():
            windows[b] = float(err[m].mean())
    return TrackingError(float(err.mean()), float(err.std()), windows, err)
