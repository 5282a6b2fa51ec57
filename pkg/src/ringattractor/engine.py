"""Fixed-step LIF simulation of the ring.

Membrane units are chosen so that a constant input current ``I`` drives the
membrane to the steady state ``V = I``.  Each step:

1. synaptic traces decay by ``exp(-dt / tau_syn)``;
2. the recurrent current ``scale / n * W.T @ s`` is formed from the decayed
   traces (``W`` in ``[pre, post]`` layout) and added to the background and
   any external current;
3. membranes relax toward that current with exact exponential Euler;
4. neurons at or above threshold spike, reset and become refractory, and
   bump their own trace by ``spike_increment``.

``run`` drives the compiled kernel (or its numpy twin); ``step`` is a
direct single-step implementation of the same update used as a reference.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernel
from .ring import (
    BoundaryConfig,
    GainSet,
    RingGeometry,
    WeightSet,
    build_geometry,
    build_weights,
    effective_asym_weights,
    wrap,
)

CHUNK_STEPS = 10_000


class SimulationError(RuntimeError):
    """Raised when the membrane state stops being finite."""


@dataclass(frozen=True)
class NeuronParams:
    tau_m: float = 0.020
    v_th: float = 1.0
    v_reset: float = 0.0
    t_ref: float = 0.002
    i_bg: float = 4.5

    def __post_init__(self):
        if self.tau_m <= 0:
            raise ValueError("tau_m must be positive")
        if not self.v_reset < self.v_th:
            raise ValueError("v_reset must be below v_th")
        if self.t_ref < 0:
            raise ValueError("t_ref must be nonnegative")
        if not math.isfinite(self.i_bg):
            raise ValueError("i_bg must be finite")


@dataclass(frozen=True)
class SynapseParams:
    tau_syn: float = 0.010
    spike_increment: float = 1.0

    def __post_init__(self):
        if self.tau_syn <= 0:
            raise ValueError("tau_syn must be positive")
        if self.spike_increment <= 0:
            raise ValueError("spike_increment must be positive")


@dataclass(frozen=True)
class SimConfig:
    geometry: RingGeometry
    weights: WeightSet
    gains: GainSet = GainSet()
    neuron: NeuronParams = NeuronParams()
    synapse: SynapseParams = SynapseParams()
    dt: float = 1e-4
    init_angle: float = 0.0
    init_current: float = 2.0
    init_duration: float = 0.1
    seed: int = 0
    # global multiplier on the recurrent current
    recurrent_scale: float = 6.0
    noise_std: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.init_duration < 0:
            raise ValueError("init_duration must be nonnegative")
        if not 0.0 <= self.init_angle < 2 * math.pi:
            raise ValueError("init_angle must lie in [0, 2pi)")
        if self.weights.n != self.geometry.n:
            raise ValueError("weights do not match geometry")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @property
    def n(self) -> int:
        return self.geometry.n

    @property
    def init_index(self) -> int:
        return self.geometry.nearest_index(self.init_angle)

    @property
    def ref_steps(self) -> int:
        return int(round(self.neuron.t_ref / self.dt))

    @property
    def init_steps(self) -> int:
        return int(round(self.init_duration / self.dt))

    def with_gains(self, gains: GainSet) -> "SimConfig":
        """Copy with new gains; weights are rebuilt on the same boundary."""
        ws = build_weights(self.geometry, gains, self.weights.boundary)
        return replace(self, gains=gains, weights=ws)

    def with_currents(
        self,
        i_bg: float | None = None,
        recurrent_scale: float | None = None,
        init_current: float | None = None,
    ) -> "SimConfig":
        """Copy with any of the current parameters replaced."""
        out = self
        if i_bg is not None:
            out = replace(out, neuron=replace(out.neuron, i_bg=float(i_bg)))
        if recurrent_scale is not None:
            out = replace(out, recurrent_scale=float(recurrent_scale))
        if init_current is not None:
            out = replace(out, init_current=float(init_current))
        return out

def make_config(
    n: int = 120,
    gains: GainSet | None = None,
    boundary: BoundaryConfig | None = None,
    **kwargs,
) -> SimConfig:
    """Build a config with geometry and weights derived from ``n`` and gains."""
    gains = gains or GainSet()
    geom = build_geometry(n)
    ws = build_weights(geom, gains, boundary)
    if "init_angle" in kwargs:
        kwargs["init_angle"] = wrap(kwargs["init_angle"])
    return SimConfig(geometry=geom, weights=ws, gains=gains, **kwargs)


@dataclass(frozen=True)
class SpikeRaster:
    times: np.ndarray
    neurons: np.ndarray
    n: int

    def __post_init__(self):
        if len(self.times) != len(self.neurons):
            raise ValueError("times and neurons differ in length")
        if len(self.times) and np.any(np.diff(self.times) < 0):
            raise ValueError("spike times must be nondecreasing")
        if len(self.neurons) and (
            self.neurons.min() < 0 or self.neurons.max() >= self.n
        ):
            raise ValueError("neuron index out of range")

    @classmethod
    def empty(cls, n: int) -> "SpikeRaster":
        return cls(np.zeros(0), np.zeros(0, dtype=np.int64), n)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def events(self) -> list[tuple[float, int]]:
        return list(zip(self.times.tolist(), self.neurons.tolist()))

    def window(self, t0: float, t1: float) -> "SpikeRaster":
        lo, hi = np.searchsorted(self.times, [t0, t1], side="left")
        return SpikeRaster(self.times[lo:hi], self.neurons[lo:hi], self.n)

    def counts(self, t0: float, t1: float) -> np.ndarray:
        w = self.window(t0, t1)
        return np.bincount(w.neurons, minlength=self.n).astype(float)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time_s", "neuron"])
            for t, i in zip(self.times.tolist(), self.neurons.tolist()):
                wr.writerow([repr(t), i])

    @classmethod
    def from_csv(cls, path, n: int) -> "SpikeRaster":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        times = np.array([float(r["time_s"]) for r in rows])
        neurons = np.array([int(r["neuron"]) for r in rows], dtype=np.int64)
        return cls(times, neurons, n)


@dataclass(frozen=True)
class VelocityProfile:
    """Zero-order-held velocity command."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.ndim != 1 or t.shape != v.shape or len(t) == 0:
            raise ValueError("velocity profile needs matching nonempty 1-D arrays")
        if t[0] != 0:
            raise ValueError("velocity profile must start at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("velocity profile times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("velocity values must be finite")

    @classmethod
    def constant(cls, v: float) -> "VelocityProfile":
        return cls(np.array([0.0]), np.array([float(v)]))

    @classmethod
    def from_samples(cls, samples) -> "VelocityProfile":
        t, v = zip(*samples)
        return cls(np.array(t), np.array(v))

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.values.tolist()))

    def at(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.values[np.clip(idx, 0, None)]

    def negated(self) -> "VelocityProfile":
        return VelocityProfile(self.times, -self.values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time_s", "velocity_rad_s"])
            for t, v in self.samples:
                wr.writerow([repr(t), repr(v)])

    @classmethod
    def from_csv(cls, path) -> "VelocityProfile":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {
                "time_s",
                "velocity_rad_s",
            } <= set(reader.fieldnames):
                raise ValueError(f"{path}: expected columns time_s,velocity_rad_s")
            rows = [(float(r["time_s"]), float(r["velocity_rad_s"])) for r in reader]
        return cls.from_samples(rows)


@dataclass
class SimState:
    t: float
    v_mem: np.ndarray
    s_trace: np.ndarray
    refrac_until: np.ndarray
    raster: SpikeRaster = field(repr=False)

    @classmethod
    def initial(cls, cfg: SimConfig) -> "SimState":
        n = cfg.n
        return cls(
            t=0.0,
            v_mem=np.zeros(n),
            s_trace=np.zeros(n),
            refrac_until=np.zeros(n),
            raster=SpikeRaster.empty(n),
        )


def _init_vector(cfg: SimConfig) -> np.ndarray:
    ext = np.zeros(cfg.n)
    ext[cfg.init_index] = cfg.init_current
    return ext


def step(state: SimState, cfg: SimConfig, v_now: float) -> SimState:
    """One explicit update with the dense weight matrices."""
    if state.v_mem.shape != (cfg.n,):
        raise ValueError("state does not match config dimensions")
    nrn, syn = cfg.neuron, cfg.synapse
    s = state.s_trace * math.exp(-cfg.dt / syn.tau_syn)
    w = cfg.weights.sym_channel() + effective_asym_weights(
        cfg.weights, cfg.gains, v_now
    )
    current = nrn.i_bg + cfg.recurrent_scale / cfg.n * (w.T @ s)
    if state.t < cfg.init_duration - cfg.dt / 2:
        current = current + _init_vector(cfg)
    t_new = state.t + cfg.dt
    blocked = t_new < state.refrac_until + cfg.dt / 2
    v = current + (state.v_mem - current) * math.exp(-cfg.dt / nrn.tau_m)
    v = np.where(blocked, nrn.v_reset, v)
    if not np.all(np.isfinite(v)):
        raise SimulationError(f"non-finite membrane at t={t_new:.6f}s")
    fired = np.flatnonzero((~blocked) & (v >= nrn.v_th))
    v[fired] = nrn.v_reset
    refrac = state.refrac_until.copy()
    refrac[fired] = t_new + nrn.t_ref
    s[fired] += syn.spike_increment
    raster = state.raster
    if len(fired):
        raster = SpikeRaster(
            np.concatenate([raster.times, np.full(len(fired), t_new)]),
            np.concatenate([raster.neurons, fired]),
            cfg.n,
        )
    return SimState(t_new, v, s, refrac, raster)


class KernelState:
    """Mutable integration state shared by the continuous and hardware runners."""

    def __init__(self, n: int, n_chan: int):
        self.v_mem = np.zeros(n)
        self.refrac = np.zeros(n, dtype=np.int64)
        self.acc = np.zeros((n_chan, n))
        self.traces = np.zeros((n_chan, n))

    def rebind(self, weights: np.ndarray) -> None:
        """Recompute channel accumulators after a weight change."""
        self.acc = np.ascontiguousarray(
            np.einsum("kp,kpq->kq", self.traces, weights)
        )


def integrate(
    ks: KernelState,
    weights: np.ndarray,
    tau_syn: np.ndarray,
    coef: np.ndarray,
    *,
    dt: float,
    drive: np.ndarray,
    tau_m: np.ndarray,
    neuron: NeuronParams,
    inc: float,
    ext: np.ndarray | None = None,
    ext_steps: int = 0,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
    step_offset: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance ``coef.shape[0]`` steps; return global spike steps and indices.

    ``weights`` is ``(channels, pre, post)``; ``coef[s, k]`` multiplies
    channel ``k``'s accumulated input at step ``s``.
    """
    n = len(drive)
    weights = np.ascontiguousarray(weights, dtype=float)
    decay_syn = np.exp(-dt / np.asarray(tau_syn, dtype=float))
    decay_mem = np.exp(-dt / np.asarray(tau_m, dtype=float))
    drive = np.ascontiguousarray(drive, dtype=float)
    ext = np.zeros(n) if ext is None else np.ascontiguousarray(ext, dtype=float)
    ref_steps = int(round(neuron.t_ref / dt))
    no_noise = np.zeros((0, n))
    out_s, out_i = [], []
    total = coef.shape[0]
    for lo in range(0, total, CHUNK_STEPS):
        hi = min(lo + CHUNK_STEPS, total)
        if noise_std > 0:
            noise = noise_std * rng.standard_normal((hi - lo, n))
        else:
            noise = no_noise
        s_idx, n_idx = kernel.advance(
            ks.v_mem,
            ks.refrac,
            ks.acc,
            ks.traces,
            weights,
            decay_syn,
            decay_mem,
            drive,
            np.ascontiguousarray(coef[lo:hi]),
            ext,
            max(0, ext_steps - lo),
            noise,
            float(neuron.v_th),
            float(neuron.v_reset),
            ref_steps,
            float(inc),
        )
        if not np.all(np.isfinite(ks.v_mem)) or not np.all(np.isfinite(ks.acc)):
            raise SimulationError(
                f"non-finite state at t={(step_offset + hi) * dt:.6f}s"
            )
        out_s.append(s_idx + lo + step_offset)
        out_i.append(n_idx)
    return np.concatenate(out_s), np.concatenate(out_i)


def channel_matrices(cfg: SimConfig) -> np.ndarray:
    plus, minus = cfg.weights.asym_channels()
    return np.stack([cfg.weights.sym_channel(), plus, minus])


def velocity_coefficients(cfg: SimConfig, v: np.ndarray) -> np.ndarray:
    """Per-step channel multipliers for the symmetric and +/- velocity channels."""
    scale = cfg.recurrent_scale / cfg.n
    coef = np.empty((len(v), 3))
    coef[:, 0] = scale
    gv = scale * cfg.gains.g_sin * v
    coef[:, 1] = np.where(v > 0, gv, 0.0)
    coef[:, 2] = np.where(v < 0, gv, 0.0)
    return coef


def run(
    cfg: SimConfig, profile: VelocityProfile, t_end: float
) -> tuple[SpikeRaster, list[tuple[float, float]]]:
    """Simulate ``[0, t_end)``; return the raster and the held velocity changes."""
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    n_steps = int(round(t_end / cfg.dt))
    t_steps = np.arange(n_steps) * cfg.dt
    v = profile.at(t_steps)
    ks = KernelState(cfg.n, 3)
    steps, idx = integrate(
        ks,
        channel_matrices(cfg),
        np.full(3, cfg.synapse.tau_syn),
        velocity_coefficients(cfg, v),
        dt=cfg.dt,
        drive=np.full(cfg.n, cfg.neuron.i_bg),
        tau_m=np.full(cfg.n, cfg.neuron.tau_m),
        neuron=cfg.neuron,
        inc=cfg.synapse.spike_increment,
        ext=_init_vector(cfg),
        ext_steps=cfg.init_steps,
        noise_std=cfg.noise_std,
        rng=np.random.default_rng(cfg.seed),
    )
    raster = SpikeRaster((steps + 1) * cfg.dt, idx, cfg.n)
    if n_steps:
        change = np.flatnonzero(np.r_[True, v[1:] != v[:-1]])
        applied = [(float(t_steps[i]), float(v[i])) for i in change]
    else:
        applied = []
    return raster, applied


def mean_rate_profile(
    raster: SpikeRaster, t0: float, t1: float, n: int | None = None
) -> np.ndarray:
    """Per-neuron firing rate (Hz) over ``[t0, t1)``."""
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    n = raster.n if n is None else n
    w = raster.window(t0, t1)
    return np.bincount(w.neurons, minlength=n).astype(float) / (t1 - t0)

