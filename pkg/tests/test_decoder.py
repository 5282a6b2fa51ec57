import json
import math

import numpy as np
import pytest

from ringattractor.decoder import (
    DecodedTrace,
    decode_pva,
    decode_trace,
    drift_windows,
    fit_bump_velocity,
    ols_fit,
    slope_through_origin,
    tracking_error,
    unwrap,
    weighted_linear_fit,
)
from ringattractor.engine import SpikeRaster
from ringattractor.ring import build_geometry


def raster_from(counts_at, n, t=0.025):
    times, neurons = [], []
    for idx, c in counts_at.items():
        times += [t] * c
        neurons += [idx] * c
    order = np.argsort(times, kind="stable")
    return SpikeRaster(np.array(times)[order], np.array(neurons)[order], n)


def test_single_neuron_pva():
    g = build_geometry(12)
    a, ok = decode_pva(raster_from({5: 3}, 12), g, 0.05, 0.05)
    assert ok and a == pytest.approx(g.preferred_angles[5])


def test_two_neuron_pva_bisects():
    g = build_geometry(12)
    a, ok = decode_pva(raster_from({2: 4, 4: 4}, 12), g, 0.05, 0.05)
    assert ok and a == pytest.approx(g.preferred_angles[3])


def test_opposite_neurons_invalid():
    g = build_geometry(12)
    a, ok = decode_pva(raster_from({0: 2, 6: 2}, 12), g, 0.05, 0.05)
    assert not ok and math.isnan(a)


def test_window_is_half_open():
    g = build_geometry(12)
    r = raster_from({1: 1}, 12, t=0.05)
    assert not decode_pva(r, g, 0.05, 0.05)[1]
    assert decode_pva(r, g, 0.06, 0.05)[1]


def test_argmax_method():
    g = build_geometry(12)
    a, ok = decode_pva(raster_from({2: 3, 3: 1}, 12), g, 0.05, 0.05, method="argmax")
    assert ok and a == g.preferred_angles[2]
    with pytest.raises(ValueError):
        decode_pva(raster_from({2: 3}, 12), g, 0.05, 0.05, method="nope")
    with pytest.raises(ValueError):
        decode_pva(raster_from({2: 3}, 12), g, 0.05, 0.0)


def test_empty_raster_trace_invalid():
    tr = decode_trace(SpikeRaster.empty(8), build_geometry(8), t_end=0.5)
    assert len(tr) > 1 and not tr.valid.any()


def test_wide_window_repeats_pooled_estimate():
    g = build_geometry(12)
    r = SpikeRaster(np.array([0.01, 0.02, 0.03]), np.array([1, 2, 3]), 12)
    tr = decode_trace(r, g, dt_out=0.01, window=10.0, t_start=0.04, t_end=0.1)
    assert tr.valid.all()
    np.testing.assert_allclose(tr.angles, g.preferred_angles[2])


def test_trace_csv_round_trip(tmp_path):
    tr = DecodedTrace(np.array([0.01, 0.02]), np.array([0.5, np.nan]), np.array([True, False]))
    tr.to_csv(tmp_path / "trace.csv")
    assert (tmp_path / "trace.csv").read_text().splitlines()[0] == "time_s,angle_rad,valid"
    back = DecodedTrace.from_csv(tmp_path / "trace.csv")
    np.testing.assert_array_equal(back.valid, tr.valid)
    assert back.angles[0] == 0.5 and math.isnan(back.angles[1])


def _trace(angles, valid=None):
    angles = np.asarray(angles, float)
    valid = np.ones(len(angles), bool) if valid is None else np.asarray(valid)
    return DecodedTrace(np.arange(1, len(angles) + 1) * 0.01, angles, valid)


def test_unwrap_examples():
    _, u = unwrap(_trace([0.1, 6.2, 0.1]))
    np.testing.assert_allclose(u, [0.1, 6.2 - 2 * math.pi, 0.1])
    _, u = unwrap(_trace([1.0, 1.0, 1.0]))
    np.testing.assert_array_equal(u, [1.0, 1.0, 1.0])
    raw = np.mod(0.5 * np.arange(30), 2 * math.pi)
    _, u = unwrap(_trace(raw))
    np.testing.assert_allclose(np.diff(u), 0.5)


def test_unwrap_skips_invalid_and_rejects_empty():
    t, u = unwrap(_trace([0.1, np.nan, 0.2], [True, False, True]))
    assert len(t) == 2
    with pytest.raises(ValueError):
        unwrap(_trace([np.nan], [False]))


def test_fit_bump_velocity_line():
    t = np.linspace(0, 2, 50)
    f = fit_bump_velocity((t, 0.3 * t + 1), 0.0, 2.0)
    assert f.slope == pytest.approx(0.3) and f.r_squared == pytest.approx(1.0)
    f = fit_bump_velocity((t, np.full(50, 2.0)), 0.0, 2.0)
    assert f.slope == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        fit_bump_velocity((t, t), 5.0, 6.0)


def test_weighted_fit_equal_sems_match_ols():
    rng = np.random.default_rng(1)
    x = np.arange(6.0)
    y = 2 * x + rng.normal(size=6)
    w = weighted_linear_fit([(a, b, 0.3) for a, b in zip(x, y)])
    o = ols_fit(x, y)
    assert w.slope == pytest.approx(o.slope) and w.intercept == pytest.approx(o.intercept)
    assert w.r_squared == pytest.approx(o.r_squared)


def test_weighted_fit_exact_line():
    f = weighted_linear_fit([(0, 1, 0.1), (1, 3, 5.0), (2, 5, 0.01)])
    assert f.slope == pytest.approx(2) and f.intercept == pytest.approx(1)
    assert f.r_squared == pytest.approx(1.0)


def test_weighted_fit_outlier_matches_closed_form():
    pts = [(0.0, 0.0, 0.01), (1.0, 1.0, 0.01), (2.0, 4.0, 1.0)]
    f = weighted_linear_fit(pts)
    x, y, s = np.array(pts).T
    # independent oracle: numpy's weighted polyfit uses w = 1/sigma
    slope, intercept = np.polyfit(x, y, 1, w=1 / s)
    assert f.slope == pytest.approx(slope, rel=1e-10)
    assert f.intercept == pytest.approx(intercept, abs=1e-10)
    assert abs(f.slope - 1) < 0.01


def test_weighted_fit_errors():
    with pytest.raises(ValueError):
        weighted_linear_fit([(0, 0, 1), (1, 1, 0), (2, 2, 1)])
    with pytest.raises(ValueError):
        weighted_linear_fit([(0, 0, 1), (1, 1, 1)])


def test_fit_json(tmp_path):
    f = ols_fit([0, 1, 2], [0, 1, 2.5])
    f.to_json(tmp_path / "fit.json")
    doc = json.loads((tmp_path / "fit.json").read_text())
    assert {"slope", "intercept", "r_squared", "slope_stderr"} <= set(doc)


def test_slope_through_origin():
    k, se = slope_through_origin([1, 2, -1], [2, 4, -2])
    assert k == pytest.approx(2) and se == pytest.approx(0)


def test_drift_windows_examples():
    t = np.arange(0, 5, 0.01)
    tr = DecodedTrace(t + 0.01, np.full(len(t), 1.0), np.ones(len(t), bool))
    np.testing.assert_allclose(drift_windows(tr, 1.0), 0.0)
    np.testing.assert_allclose(drift_windows(tr, 1.0 - math.radians(5)), 5.0)
    assert len(drift_windows(tr, 1.0)) == 10


def test_drift_windows_flags_empty():
    t = np.arange(0, 1, 0.01) + 0.01
    valid = t < 0.5
    tr = DecodedTrace(t, np.where(valid, 0.0, np.nan), valid)
    out = drift_windows(tr, 0.0, window=0.5, t_start=0.0, t_end=1.0)
    assert out[0] == 0 and math.isnan(out[1])
    with pytest.raises(ValueError):
        drift_windows(tr, 0.0, window=0.0)


def test_tracking_error_examples():
    t = np.arange(0.01, 3.0, 0.01)
    truth = [(0.0, 2.0), (3.0, 2.0)]
    tr = DecodedTrace(t, np.full(len(t), 2.0), np.ones(len(t), bool))
    e = tracking_error(tr, truth)
    assert e.mean_deg == pytest.approx(0, abs=1e-12) and e.std_deg == pytest.approx(0, abs=1e-12)
    np.testing.assert_allclose(e.windows, 0, atol=1e-12)
    tr3 = DecodedTrace(t, np.full(len(t), 2.0 + math.radians(3)), np.ones(len(t), bool))
    e = tracking_error(tr3, truth)
    assert e.mean_deg == pytest.approx(3) and e.std_deg == pytest.approx(0, abs=1e-9)
    assert len(e.windows) == 3


def test_tracking_error_interpolates_across_wrap():
    truth = [(0.0, 6.0), (1.0, 6.0 + 0.5 - 2 * math.pi)]
    t = np.array([0.5])
    tr = DecodedTrace(t, np.array([np.mod(6.25, 2 * math.pi)]), np.array([True]))
    assert tracking_error(tr, truth).mean_deg == pytest.approx(0, abs=1e-9)


def test_tracking_error_no_overlap():
    tr = DecodedTrace(np.array([5.0]), np.array([0.0]), np.array([True]))
    with pytest.raises(ValueError):
        tracking_error(tr, [(0.0, 0.0), (1.0, 0.0)])
