"""Ring geometry and connectivity.

Weight matrices use the ``[pre, post]`` convention: ``w[i, j]`` is the
weight from presynaptic neuron ``i`` onto postsynaptic neuron ``j``.  With
this convention the antisymmetric kernel ``sin(theta_j - theta_i)`` pushes
the bump toward increasing angle when the velocity is positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap(angle):
    """Wrap angle(s) to ``[0, 2*pi)``."""
    out = np.mod(angle, TWO_PI)
    # np.mod can round tiny negatives up to exactly 2*pi
    out = np.where(out >= TWO_PI, 0.0, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


def wrap_diff(a, b):
    """Signed minimal difference ``a - b`` on the circle, in ``(-pi, pi]``."""
    d = np.mod(np.subtract(a, b), TWO_PI)
    d = np.where(d > math.pi, d - TWO_PI, d)
    # -pi can only appear through rounding; fold it onto +pi
    d = np.where(d <= -math.pi, d + TWO_PI, d)
    if np.ndim(d) == 0:
        return float(d)
    return d


@dataclass(frozen=True)
class RingGeometry:
    n: int
    preferred_angles: np.ndarray = field(repr=False)

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n

    def nearest_index(self, angle: float) -> int:
        """Index of the neuron whose preferred angle is closest to ``angle``.

        Ties go to the lower index.
        """
        d = np.abs(wrap_diff(self.preferred_angles, angle))
        return int(np.argmin(d))


def build_geometry(n: int) -> RingGeometry:
    if int(n) != n or n < 4:
        raise ValueError(f"ring needs at least 4 neurons, got {n}")
    n = int(n)
    angles = TWO_PI * np.arange(n) / n
    angles.setflags(write=False)
    return RingGeometry(n=n, preferred_angles=angles)


@dataclass(frozen=True)
class GainSet:
    g_inh: float = -16.46
    g_cos: float = 15.86
    g_sin: float = 0.13

    def __post_init__(self):
        if not self.g_inh < 0:
            raise ValueError(f"g_inh must be negative, got {self.g_inh}")
        if not self.g_cos > 0:
            raise ValueError(f"g_cos must be positive, got {self.g_cos}")
        if not self.g_sin > 0:
            raise ValueError(f"g_sin must be positive, got {self.g_sin}")


@dataclass(frozen=True)
class BoundaryConfig:
    """Mechanical limits of a joint that does not span the full circle.

    ``oob_peak`` is the extra inhibition (in gain units) received by neurons
    at the centre of the out-of-bound arc; ``None`` means ``|g_inh| / 2``.
    The inhibition is zero within ``oob_margin`` of either limit so that a
    bump parked at a limit is not pushed back inside by the gradient.
    """

    theta_0: float
    theta_l: float
    ramp_width: float = math.pi / 60
    oob_peak: float | None = None
    oob_margin: float = math.pi / 6

    def __post_init__(self):
        if not 0.0 <= self.theta_0 < TWO_PI:
            raise ValueError(f"theta_0 must lie in [0, 2pi), got {self.theta_0}")
        if not self.theta_0 < self.theta_l < TWO_PI:
            raise ValueError(
                f"theta_l must lie in (theta_0, 2pi), got {self.theta_l}"
            )
        max_ramp = (TWO_PI - (self.theta_l - self.theta_0)) / 2
        if not 0.0 < self.ramp_width <= max_ramp + 1e-15:
            raise ValueError(
                f"ramp_width must lie in (0, {max_ramp:.6g}], got {self.ramp_width}"
            )
        if self.oob_peak is not None and self.oob_peak < 0:
            raise ValueError("oob_peak must be nonnegative")
        if not 0.0 <= self.oob_margin < max_ramp:
            raise ValueError(f"oob_margin must lie in [0, {max_ramp:.6g})")

    @property
    def span(self) -> float:
        return self.theta_l - self.theta_0

    @property
    def theta_m_star(self) -> float:
        """Centre of the out-of-bound arc."""
        return wrap((self.theta_0 + self.theta_l) / 2 + math.pi)

    def contains(self, angle) -> np.ndarray:
        return np.mod(np.subtract(angle, self.theta_0), TWO_PI) <= self.span


@dataclass(frozen=True)
class WeightSet:
    w_sym: np.ndarray = field(repr=False)
    asym_kernel: np.ndarray = field(repr=False)
    atten_plus: np.ndarray = field(repr=False)
    atten_minus: np.ndarray = field(repr=False)
    # extra (nonpositive) inhibition received by each postsynaptic neuron
    oob_inhibition: np.ndarray = field(repr=False)
    boundary: BoundaryConfig | None = None

    @property
    def bounded(self) -> bool:
        return self.boundary is not None

    @property
    def n(self) -> int:
        return self.w_sym.shape[0]

    def sym_channel(self) -> np.ndarray:
        """Symmetric weights plus out-of-bound inhibition, ``[pre, post]``."""
        return self.w_sym + self.oob_inhibition[None, :]

    def asym_channels(self) -> tuple[np.ndarray, np.ndarray]:
        """Attenuated kernels used for positive and negative velocity.

        Attenuation scales each presynaptic row: neurons near a limit stop
        pushing the bump further toward it.
        """
        return (
            self.asym_kernel * self.atten_plus[:, None],
            self.asym_kernel * self.atten_minus[:, None],
        )


def _offset_tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    """cos and sin of ``2*pi*k/n`` with exact even/odd symmetry in ``k``."""
    k = np.arange(n // 2 + 1)
    c_half = np.cos(TWO_PI * k / n)
    s_half = np.sin(TWO_PI * k / n)
    s_half[0] = 0.0
    if n % 2 == 0:
        s_half[-1] = 0.0
    cos_t = np.empty(n)
    sin_t = np.empty(n)
    cos_t[: len(k)] = c_half
    sin_t[: len(k)] = s_half
    rest = np.arange(len(k), n)
    cos_t[rest] = c_half[n - rest]
    sin_t[rest] = -s_half[n - rest]
    return cos_t, sin_t


def _circulant(table: np.ndarray) -> np.ndarray:
    n = len(table)
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    return table[idx]


def symmetric_weights(geom: RingGeometry, gains: GainSet) -> np.ndarray:
    cos_t, _ = _offset_tables(geom.n)
    return _circulant(gains.g_inh + gains.g_cos * cos_t)


def asymmetric_kernel(geom: RingGeometry) -> np.ndarray:
    _, sin_t = _offset_tables(geom.n)
    return _circulant(sin_t)


def build_attenuation(
    geom: RingGeometry, bc: BoundaryConfig | None
) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear velocity attenuation ``(a_plus, a_minus)``.

    Inside the valid range ``a_plus`` falls from 1 to 0 over the last
    ``ramp_width`` before ``theta_l``; ``a_minus`` does the same approaching
    ``theta_0``.  In the out-of-bound arc both are 0 except for a mirror
    ramp just outside the opposite limit, which keeps both profiles
    continuous on the circle.
    """
    n = geom.n
    if bc is None:
        return np.ones(n), np.ones(n)
    th = geom.preferred_angles
    r = bc.ramp_width
    inside = bc.contains(th)
    from_lo = np.mod(th - bc.theta_0, TWO_PI)
    to_hi = bc.span - from_lo
    below_lo = np.mod(bc.theta_0 - th, TWO_PI)
    above_hi = np.mod(th - bc.theta_l, TWO_PI)

    plus = np.where(
        inside,
        np.clip(to_hi / r, 0.0, 1.0),
        np.clip(1.0 - below_lo / r, 0.0, 1.0),
    )
    minus = np.where(
        inside,
        np.clip(from_lo / r, 0.0, 1.0),
        np.clip(1.0 - above_hi / r, 0.0, 1.0),
    )
    return plus, minus


def oob_inhibition(
    geom: RingGeometry, bc: BoundaryConfig | None, gains: GainSet
) -> np.ndarray:
    """Extra inhibition over the out-of-bound arc, peaking at ``theta_m_star``.

    Zero inside the range and within ``oob_margin`` of each limit, then
    linear up to the peak at the centre of the arc.
    """
    if bc is None:
        return np.zeros(geom.n)
    peak = abs(gains.g_inh) / 2 if bc.oob_peak is None else bc.oob_peak
    th = geom.preferred_angles
    half = (TWO_PI - bc.span) / 2
    to_limit = np.minimum(
        np.mod(th - bc.theta_l, TWO_PI), np.mod(bc.theta_0 - th, TWO_PI)
    )
    profile = np.clip((to_limit - bc.oob_margin) / (half - bc.oob_margin), 0.0, 1.0)
    return np.where(bc.contains(th), 0.0, -peak * profile)


def build_weights(
    geom: RingGeometry, gains: GainSet, boundary: BoundaryConfig | None = None
) -> WeightSet:
    plus, minus = build_attenuation(geom, boundary)
    arrays = dict(
        w_sym=symmetric_weights(geom, gains),
        asym_kernel=asymmetric_kernel(geom),
        atten_plus=plus,
        atten_minus=minus,
        oob_inhibition=oob_inhibition(geom, boundary, gains),
    )
    for a in arrays.values():
        a.setflags(write=False)
    return WeightSet(**arrays, boundary=boundary)


def effective_asym_weights(ws: WeightSet, gains: GainSet, v: float) -> np.ndarray:
    """Velocity-scaled antisymmetric weights for the current command."""
    if v > 0:
        atten = ws.atten_plus
    elif v < 0:
        atten = ws.atten_minus
    else:
        return np.zeros_like(ws.asym_kernel)
    return v * gains.g_sin * ws.asym_kernel * atten[:, None]
