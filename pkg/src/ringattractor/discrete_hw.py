"""Emulation of a ring mapped onto a small mixed-signal neuromorphic core.

Weights are integer numbers of identical unit synapses drawn from four
synapse classes, every neuron stores at most ``fan_in_limit`` presynaptic
entries, and velocity is applied by adding or removing direction-selective
connections between neighbouring populations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .decoder import (
    DecodedTrace,
    LinearFit,
    decode_trace,
    fit_bump_velocity,
    unwrap,
    weighted_linear_fit,
)
from .engine import KernelState, NeuronParams, SpikeRaster, integrate
from .ring import GainSet, TWO_PI, build_geometry

CLASS_NAMES = ("fast_exc", "slow_exc", "fast_inh", "slow_inh")


class FanInError(ValueError):
    """A neuron would need more presynaptic entries than the core stores."""


@dataclass(frozen=True)
class SynapseClass:
    name: str
    sign: int
    efficacy: float  # weight units per connection, before the sign
    tau: float

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.efficacy <= 0 or self.tau <= 0:
            raise ValueError("efficacy and tau must be positive")


def default_classes(
    inh_weight: float = 12.0, exc_weight: float = 4.0
) -> tuple[SynapseClass, ...]:
    return (
        SynapseClass("fast_exc", 1, exc_weight, 0.010),
        SynapseClass("slow_exc", 1, exc_weight, 0.050),
        SynapseClass("fast_inh", -1, inh_weight, 0.010),
        SynapseClass("slow_inh", -1, inh_weight, 0.050),
    )


@dataclass(frozen=True)
class HwTopology:
    n_pops: int = 10
    pop_size: int = 4
    fan_in_limit: int = 64
    synapse_classes: tuple[SynapseClass, ...] = field(default_factory=default_classes)
    # classes carrying the symmetric profile and the velocity connections
    exc_class: str = "fast_exc"
    inh_class: str = "fast_inh"
    velocity_class: str = "fast_exc"

    def __post_init__(self):
        if self.n_pops < 3 or self.pop_size < 1:
            raise ValueError("need at least 3 populations of at least 1 neuron")
        if self.n_pops * self.pop_size > 256:
            raise ValueError("a single core holds at most 256 neurons")
        if self.fan_in_limit < 1:
            raise ValueError("fan_in_limit must be positive")
        names = [c.name for c in self.synapse_classes]
        if len(set(names)) != len(names):
            raise ValueError("synapse class names must be unique")
        for attr in ("exc_class", "inh_class", "velocity_class"):
            if getattr(self, attr) not in names:
                raise ValueError(f"{attr}={getattr(self, attr)!r} is not a class")
        if self.synapse_classes[names.index(self.exc_class)].sign != 1:
            raise ValueError("exc_class must be excitatory")
        if self.synapse_classes[names.index(self.inh_class)].sign != -1:
            raise ValueError("inh_class must be inhibitory")

    @property
    def n_neurons(self) -> int:
        return self.n_pops * self.pop_size

    @property
    def n_classes(self) -> int:
        return len(self.synapse_classes)

    @property
    def pop_spacing(self) -> float:
        return TWO_PI / self.n_pops

    def class_index(self, name: str) -> int:
        return [c.name for c in self.synapse_classes].index(name)

    def pop_of(self, neuron) -> np.ndarray:
        return np.asarray(neuron) // self.pop_size

    def pop_neurons(self, pop: int) -> np.ndarray:
        return np.arange(pop * self.pop_size, (pop + 1) * self.pop_size)

    def efficacy(self, name: str) -> float:
        return self.synapse_classes[self.class_index(name)].efficacy

    def with_efficacy(self, name: str, efficacy: float) -> "HwTopology":
        classes = tuple(
            replace(c, efficacy=efficacy) if c.name == name else c
            for c in self.synapse_classes
        )
        return replace(self, synapse_classes=classes)


def _offenders(counts: np.ndarray, limit: int, k: int = 5) -> str:
    fan_in = counts.sum(axis=(0, 1))
    worst = np.argsort(-fan_in, kind="stable")[:k]
    return ", ".join(f"neuron {j}: {int(fan_in[j])}" for j in worst if fan_in[j] > limit)


@dataclass(frozen=True)
class ConnectionTable:
    """Connection counts indexed ``[class, pre, post]``."""

    counts: np.ndarray = field(repr=False)
    fan_in_limit: int = 64

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 3 or c.shape[1] != c.shape[2]:
            raise ValueError("counts must have shape (classes, n, n)")
        if np.any(c < 0):
            raise ValueError("connection counts must be nonnegative")
        if np.any(c.sum(axis=(0, 1)) > self.fan_in_limit):
            raise FanInError(
                f"fan-in above {self.fan_in_limit}: "
                + _offenders(c, self.fan_in_limit)
            )
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def empty(cls, topo: HwTopology) -> "ConnectionTable":
        n = topo.n_neurons
        return cls(np.zeros((topo.n_classes, n, n), np.int64), topo.fan_in_limit)

    @property
    def n(self) -> int:
        return self.counts.shape[1]

    @property
    def fan_in(self) -> np.ndarray:
        return self.counts.sum(axis=(0, 1))

    @property
    def entries(self) -> list[tuple[int, int, int, int]]:
        """Nonzero ``(pre, post, class, count)`` entries."""
        k, i, j = np.nonzero(self.counts)
        return [
            (int(a), int(b), int(c), int(self.counts[c, a, b]))
            for c, a, b in sorted(zip(k, i, j), key=lambda e: (e[1], e[2], e[0]))
        ]

    def __len__(self) -> int:
        return int(np.count_nonzero(self.counts))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConnectionTable):
            return NotImplemented
        return self.fan_in_limit == other.fan_in_limit and np.array_equal(
            self.counts, other.counts
        )

    __hash__ = None

    def weight_matrices(self, topo: HwTopology) -> np.ndarray:
        """Signed ``[class, pre, post]`` weights (counts times class efficacy)."""
        eff = np.array([c.sign * c.efficacy for c in topo.synapse_classes])
        return self.counts * eff[:, None, None]

    def to_csv(self, path, topo: HwTopology | None = None) -> None:
        names = None if topo is None else [c.name for c in topo.synapse_classes]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["pre", "post", "class", "count"])
            for pre, post, k, cnt in self.entries:
                wr.writerow([pre, post, k if names is None else names[k], cnt])

    @classmethod
    def from_csv(cls, path, topo: HwTopology) -> "ConnectionTable":
        names = [c.name for c in topo.synapse_classes]
        counts = np.zeros((topo.n_classes, topo.n_neurons, topo.n_neurons), np.int64)
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["pre", "post", "class", "count"]:
                raise ValueError(f"{path}: expected header pre,post,class,count")
            for row_no, row in enumerate(reader, start=2):
                try:
                    k = names.index(row["class"]) if row["class"] in names else int(row["class"])
                    counts[k, int(row["pre"]), int(row["post"])] += int(row["count"])
                except (ValueError, IndexError) as exc:
                    raise ValueError(f"{path}: bad entry on line {row_no}: {exc}") from None
        return cls(counts, topo.fan_in_limit)


@dataclass(frozen=True)
class QuantizedProfile:
    excitatory: np.ndarray
    inhibitory: np.ndarray
    residual: np.ndarray  # weight minus its quantized value


def quantize_profile(
    row,
    unit_weight: float,
    fan_in_limit: int | None = None,
    multiplicity: int = 1,
) -> QuantizedProfile:
    """Round a real-valued population profile to unit-synapse counts.

    ``multiplicity`` is the number of presynaptic neurons each count is
    replicated over, used for the optional fan-in check.
    """
    if not unit_weight > 0:
        raise ValueError("unit_weight must be positive")
    row = np.asarray(row, dtype=float)
    exc = np.rint(np.maximum(row, 0.0) / unit_weight).astype(np.int64)
    inh = np.rint(np.maximum(-row, 0.0) / unit_weight).astype(np.int64)
    if fan_in_limit is not None:
        need = multiplicity * int(exc.sum() + inh.sum())
        if need > fan_in_limit:
            raise FanInError(f"profile needs fan-in {need} > {fan_in_limit}")
    residual = row - unit_weight * (exc - inh)
    return QuantizedProfile(exc, inh, residual)


def population_profile(topo: HwTopology, gains: GainSet) -> np.ndarray:
    """Continuous symmetric weight for each population offset."""
    d = np.arange(topo.n_pops)
    return gains.g_inh + gains.g_cos * np.cos(TWO_PI * d / topo.n_pops)


def auto_unit_weight(
    topo: HwTopology, gains: GainSet, reserve: int = 12, resolution: float = 0.5
) -> float:
    """Smallest multiple of ``resolution`` whose profile leaves ``reserve`` entries free."""
    row = population_profile(topo, gains)
    budget = topo.fan_in_limit - reserve
    peak = float(np.abs(row).max())
    u = resolution
    while u <= 2 * peak + resolution:
        q = quantize_profile(row, u)
        if topo.pop_size * int(q.excitatory.sum() + q.inhibitory.sum()) <= budget:
            return u
        u += resolution
    raise FanInError(f"no unit weight fits {budget} entries")


def _expand(pop_counts: np.ndarray, topo: HwTopology) -> np.ndarray:
    """Neuron-level ``[pre, post]`` counts from per-offset population counts."""
    pops = np.arange(topo.n_pops)
    offset = (pops[None, :] - pops[:, None]) % topo.n_pops
    pop_mat = pop_counts[offset]
    return np.kron(pop_mat, np.ones((topo.pop_size, topo.pop_size), np.int64))


def build_hw_ring(
    topo: HwTopology, gains: GainSet, unit_weight: float | None = None
) -> ConnectionTable:
    """All-to-all population connectivity as neuron-level connection counts.

    Positive parts of the profile are counted in units of the excitatory
    class efficacy and negative parts in units of the inhibitory one;
    ``unit_weight`` overrides both.
    """
    row = population_profile(topo, gains)
    u_exc = unit_weight or topo.efficacy(topo.exc_class)
    u_inh = unit_weight or topo.efficacy(topo.inh_class)
    exc = quantize_profile(np.maximum(row, 0.0), u_exc).excitatory
    inh = quantize_profile(np.minimum(row, 0.0), u_inh).inhibitory
    counts = np.zeros((topo.n_classes, topo.n_neurons, topo.n_neurons), np.int64)
    counts[topo.class_index(topo.exc_class)] += _expand(exc, topo)
    counts[topo.class_index(topo.inh_class)] += _expand(inh, topo)
    fan_in = counts.sum(axis=(0, 1))
    if np.any(fan_in > topo.fan_in_limit):
        raise FanInError(
            f"gains need fan-in up to {int(fan_in.max())} > {topo.fan_in_limit}; "
            + _offenders(counts, topo.fan_in_limit)
        )
    return ConnectionTable(counts, topo.fan_in_limit)


@dataclass(frozen=True)
class VelocityConnectionSet:
    direction: int
    n_connections: int
    realized: ConnectionTable = field(repr=False)

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if self.n_connections < 0:
            raise ValueError("n_connections must be nonnegative")


def velocity_connections(
    topo: HwTopology, direction: int, n_connections: int
) -> VelocityConnectionSet:
    """Each neuron gets ``n_connections`` inputs from the population behind it.

    For ``direction=+1`` population ``q`` listens to ``q - 1``, which drags
    the bump toward higher populations.  Inputs cycle over the presynaptic
    population's neurons starting at the same local index.
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if n_connections < 0:
        raise ValueError("n_connections must be nonnegative")
    n = topo.n_neurons
    counts = np.zeros((topo.n_classes, n, n), np.int64)
    k_cls = topo.class_index(topo.velocity_class)
    for post in range(n):
        pop, local = divmod(post, topo.pop_size)
        src = (pop - direction) % topo.n_pops
        for k in range(n_connections):
            pre = src * topo.pop_size + (local + k) % topo.pop_size
            counts[k_cls, pre, post] += 1
    # the delta alone is not bound by the fan-in limit
    delta = ConnectionTable(counts, fan_in_limit=max(topo.fan_in_limit, n_connections))
    return VelocityConnectionSet(direction, n_connections, delta)


def apply_velocity(
    table: ConnectionTable, vset: VelocityConnectionSet
) -> ConnectionTable:
    """Add the velocity connections; raises FanInError on overflow."""
    return ConnectionTable(table.counts + vset.realized.counts, table.fan_in_limit)


def remove_velocity(
    table: ConnectionTable, vset: VelocityConnectionSet
) -> ConnectionTable:
    """Inverse of ``apply_velocity``."""
    counts = table.counts - vset.realized.counts
    if np.any(counts < 0):
        raise ValueError("table does not contain these velocity connections")
    return ConnectionTable(counts, table.fan_in_limit)


@dataclass(frozen=True)
class HwRunParams:
    neuron: NeuronParams = NeuronParams()
    dt: float = 1e-4
    recurrent_scale: float = 6.0
    cue_current: float = 2.0
    jitter: float = 0.05  # relative sd of tau_m and i_bg per neuron
    # white current noise per step; lets the bump hop between populations
    # at a rate that grows smoothly with the velocity drive
    noise_std: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.jitter < 0 or self.noise_std < 0:
            raise ValueError("dt must be positive, jitter and noise nonnegative")


def run_hw(
    topo: HwTopology,
    table: ConnectionTable,
    schedule,
    cue: tuple[int, float],
    t_end: float,
    params: HwRunParams = HwRunParams(),
) -> SpikeRaster:
    """Simulate the quantized network.

    ``schedule`` is a list of ``(time, VelocityConnectionSet | None)``; each
    entry replaces the velocity connections from that time on.  ``cue`` is
    ``(population, duration)``: that population gets ``cue_current`` extra
    input from t = 0.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    times = [float(t) for t, _ in schedule]
    if any(b <= a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise ValueError("schedule times must be nonnegative and increasing")
    cue_pop, cue_dur = cue
    if not 0 <= cue_pop < topo.n_pops:
        raise ValueError(f"cue population {cue_pop} out of range")

    n, dt = topo.n_neurons, params.dt
    rng = np.random.default_rng(params.seed)
    nrn = params.neuron
    jit = params.jitter
    tau_m = nrn.tau_m * np.clip(1 + jit * rng.standard_normal(n), 0.1, None)
    drive = nrn.i_bg * (1 + jit * rng.standard_normal(n))
    ext = np.zeros(n)
    ext[topo.pop_neurons(cue_pop)] = params.cue_current
    cue_steps = int(round(cue_dur / dt))
    tau_syn = np.array([c.tau for c in topo.synapse_classes])
    scale = params.recurrent_scale / n

    bounds = [0.0] + [t for t in times if 0 < t < t_end] + [t_end]
    active = [None]
    for t, vset in schedule:
        if t <= 0:
            active[0] = vset
        elif t < t_end:
            active.append(vset)
    ks = KernelState(n, topo.n_classes)
    out_s, out_i = [], []
    for seg, vset in enumerate(active):
        lo = int(round(bounds[seg] / dt))
        hi = int(round(bounds[seg + 1] / dt))
        if hi <= lo:
            continue
        tbl = table if vset is None else apply_velocity(table, vset)
        weights = tbl.weight_matrices(topo)
        ks.rebind(weights)
        coef = np.full((hi - lo, topo.n_classes), scale)
        s, i = integrate(
            ks,
            weights,
            tau_syn,
            coef,
            dt=dt,
            drive=drive,
            tau_m=tau_m,
            neuron=nrn,
            inc=1.0,
            ext=ext,
            ext_steps=max(0, cue_steps - lo),
            noise_std=params.noise_std,
            rng=rng,
            step_offset=lo,
        )
        out_s.append(s)
        out_i.append(i)
    steps = np.concatenate(out_s) if out_s else np.zeros(0, np.int64)
    idx = np.concatenate(out_i) if out_i else np.zeros(0, np.int64)
    return SpikeRaster((steps + 1) * dt, idx, n)


def population_raster(raster: SpikeRaster, topo: HwTopology) -> SpikeRaster:
    """Relabel spikes by population index."""
    return SpikeRaster(raster.times, topo.pop_of(raster.neurons), topo.n_pops)


def decode_hw(raster: SpikeRaster, topo: HwTopology, t_end: float, **kw) -> DecodedTrace:
    """Population-level PVA trace (population preferred angles one spacing apart)."""
    return decode_trace(
        population_raster(raster, topo), build_geometry(topo.n_pops), t_end=t_end, **kw
    )


def pop_angle(topo: HwTopology, pop: int) -> float:
    return pop * topo.pop_spacing


@dataclass(frozen=True)
class SweepPoint:
    count: int
    mean_velocity: float
    sem: float  # across per-population means
    n_runs: int
    n_dead: int


@dataclass(frozen=True)
class SweepResult:
    points: list[SweepPoint]
    fit: LinearFit | None

    def doubling(self, confidence: float = 0.95) -> list[tuple[int, float, bool]]:
        """For every count ``k`` with ``2k`` also swept: ``(k, ratio, within_ci)``.

        ``within_ci`` holds when ``v(2k) - 2 v(k)`` lies inside its combined
        t-interval.
        """
        from scipy import stats

        by_count = {p.count: p for p in self.points}
        out = []
        for k, p in sorted(by_count.items()):
            q = by_count.get(2 * k)
            if q is None or k == 0:
                continue
            dof = max(1, min(p.n_runs, q.n_runs) - 1)
            t = stats.t.ppf(0.5 + confidence / 2, dof)
            gap = abs(q.mean_velocity - 2 * p.mean_velocity)
            ratio = q.mean_velocity / p.mean_velocity if p.mean_velocity else math.inf
            out.append((k, ratio, bool(gap <= t * math.hypot(2 * p.sem, q.sem))))
        return out

    def to_rows(self) -> list[dict]:
        return [
            {
                "count": p.count,
                "mean_velocity_rad_s": p.mean_velocity,
                "sem_rad_s": p.sem,
                "n_runs": p.n_runs,
                "n_dead": p.n_dead,
            }
            for p in self.points
        ]


def fitted_hw_velocity(
    raster: SpikeRaster, topo: HwTopology, t0: float, t1: float
) -> float | None:
    """Bump velocity (rad/s) over ``[t0, t1]``; None when the bump is gone."""
    trace = decode_hw(raster, topo, t_end=t1)
    window = (trace.times >= t0) & (trace.times <= t1)
    # a dead bump leaves most of the window undecodable
    if np.count_nonzero(trace.valid & window) < 0.9 * np.count_nonzero(window):
        return None
    return fit_bump_velocity(unwrap(trace), t0, t1).slope


def velocity_sweep(
    topo: HwTopology,
    table: ConnectionTable,
    counts,
    repeats: int,
    *,
    direction: int = 1,
    params: HwRunParams = HwRunParams(),
    onset: float = 2.0,
    cue_duration: float = 1.0,
    fit_window: tuple[float, float] = (2.5, 9.0),
    pops=None,
    workers: int | None = None,
) -> SweepResult:
    """Mean bump velocity per connection count, with a 1/SEM^2 weighted fit.

    Each count runs ``repeats`` times (different mismatch and noise seeds)
    from every starting population in ``pops``.  Repeats are averaged per
    population and the SEM is taken across populations.
    """
    from .parallel import parallel_map

    counts = [int(c) for c in counts]
    if not counts:
        raise ValueError("counts must be nonempty")
    if repeats < 2:
        raise ValueError("repeats must be at least 2 to estimate the SEM")
    pops = list(range(topo.n_pops)) if pops is None else list(pops)
    t0, t1 = fit_window
    jobs = [(c, p, r) for c in counts for p in pops for r in range(repeats)]

    def job(spec):
        c, p, r = spec
        vset = velocity_connections(topo, direction, c)
        pr = replace(params, seed=params.seed + 1000 * p + r)
        raster = run_hw(topo, table, [(onset, vset)], (p, cue_duration), t1, pr)
        return fitted_hw_velocity(raster, topo, t0, t1)

    results = dict(zip(jobs, parallel_map(job, jobs, workers)))
    points = []
    for c in counts:
        pop_means, n_runs, n_dead = [], 0, 0
        for p in pops:
            live = [results[(c, p, r)] for r in range(repeats) if results[(c, p, r)] is not None]
            n_dead += repeats - len(live)
            n_runs += len(live)
            if live:
                pop_means.append(float(np.mean(live)))
        if not pop_means:
            raise RuntimeError(f"every run died at count {c}")
        m = np.array(pop_means)
        sem = float(m.std(ddof=1) / math.sqrt(len(m))) if len(m) > 1 else math.inf
        points.append(SweepPoint(c, float(m.mean()), sem, n_runs, n_dead))
    fit = None
    if len(points) >= 3:
        # a zero SEM (e.g. a fully pinned count) would get infinite weight
        floor = 1e-6
        fit = weighted_linear_fit(
            [(p.count, p.mean_velocity, max(p.sem, floor)) for p in points]
        )
    return SweepResult(points, fit)
