"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are printed even
with output capture on) or ``python tests/test_acceptance.py``.
"""

import math
import subprocess
import sys
import time
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from ringattractor.calibration import (
    CalibrationObjective,
    CalibrationResult,
    refine_gsin,
    robustness_sweep,
)
from ringattractor.decoder import decode_trace, drift_windows
from ringattractor.engine import VelocityProfile, run
from ringattractor.harness import (
    default_config,
    hw_accel,
    hw_drift,
    hw_velocity_sweep,
    paired_batch,
)
from ringattractor.ring import GainSet

pytestmark = pytest.mark.slow

N_PAIRS = 20
POP_SPACING_RAD = 2 * math.pi / 10


@pytest.fixture(scope="module")
def config():
    return default_config()


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line straight to the terminal, then assert."""

    def emit(label: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        assert ok, f"{label}: {detail}"

    return emit


def _mean(reports, model):
    return [r.metrics[model]["mean_deg"] for r in reports]


def test_c01_stationary_stability(config, verdict):
    t0 = time.perf_counter()
    cfg = config.sim_config(init_angle=1.0)
    t_end = 0.9
    raster, _ = run(cfg, VelocityProfile.constant(0.0), t_end)
    trace = decode_trace(raster, cfg.geometry, t_end=t_end)
    err = drift_windows(trace, cfg.init_angle, window=t_end, t_start=0.0, t_end=t_end)[0]
    elapsed = time.perf_counter() - t0
    ok = err < 5.0 and elapsed < 10.0 and trace.valid.all()
    verdict("C1 stationary stability", ok,
            f"mean error {err:.3f} deg (< 5), valid {trace.valid.mean():.0%}, "
            f"runtime {elapsed:.2f} s (< 10)")


def test_c02_velocity_linearity(config, verdict):
    base = config.sim_config()
    start = CalibrationResult(
        gains=GainSet(config.gains.g_inh, config.gains.g_cos, 0.13),
        i_bg=base.neuron.i_bg,
        init_current=base.init_current,
        recurrent_scale=base.recurrent_scale,
        loss=math.inf,
    )
    res = refine_gsin(start, CalibrationObjective(), base)
    errs = {p.velocity: p.rel_error for p in res.diagnostics}
    worst = max(abs(e) for e in errs.values())
    k = res.velocity_gain_kappa
    ok = worst < 0.10 and abs(k - 1.0) <= 0.05
    detail = ", ".join(f"{v:+.1f}: {e:+.1%}" for v, e in errs.items())
    verdict("C2 velocity linearity", ok,
            f"g_sin {res.gains.g_sin:.5f}, kappa {k:.3f} +/- {res.kappa_stderr:.3f} "
            f"(1 +/- 0.05), per-probe errors [{detail}] (< 10%)")


def test_c03_bounded_beats_unbounded_wide(config, verdict):
    t0 = time.perf_counter()
    reports = paired_batch(config, "wide", range(N_PAIRS))
    elapsed = time.perf_counter() - t0
    assert all(not r.failures for r in reports)
    wins = sum(r.metrics["comparison"]["bounded_better"] for r in reports)
    b, u = np.array(_mean(reports, "bounded")), np.array(_mean(reports, "unbounded"))
    ok = wins >= 15 and elapsed < 300
    verdict("C3 bounded vs unbounded (wide)", ok,
            f"bounded better in {wins}/{N_PAIRS} pairs (>= 15); bounded "
            f"{b.mean():.1f} +/- {b.std():.1f} deg, unbounded {u.mean():.1f} +/- "
            f"{u.std():.1f} deg; runtime {elapsed:.0f} s (< 300)")


def test_c04_limited_parity(config, verdict):
    reports = paired_batch(config, "limited", range(N_PAIRS))
    assert all(not r.failures for r in reports)
    b, u = np.array(_mean(reports, "bounded")), np.array(_mean(reports, "unbounded"))
    ok = b.mean() < 10.0 and u.mean() < 10.0
    verdict("C4 limited-motion parity", ok,
            f"mean over {N_PAIRS} trajectories: bounded {b.mean():.2f} +/- {b.std():.2f} "
            f"deg, unbounded {u.mean():.2f} +/- {u.std():.2f} deg (both < 10); "
            f"worst single trajectory {max(b.max(), u.max()):.1f} deg")


@pytest.fixture(scope="module")
def reference_row(config):
    """Recalibrated n = 120 ring at the target rate: the baseline for C5 and C6."""
    (row,) = robustness_sweep(
        "n_neurons", [config.n], base=config.sim_config(bounded=True),
        trajectory=config.trajectory(),
    )
    assert row.error is None, row
    return row


def test_c05_size_robustness(config, reference_row, verdict):
    (small,) = robustness_sweep(
        "n_neurons", [60], base=config.sim_config(bounded=True),
        trajectory=config.trajectory(),
    )
    assert small.error is None, small
    e60, e120 = small.mean_abs_error_deg, reference_row.mean_abs_error_deg
    ok = abs(e60 - e120) <= 5.0 and e60 <= 15.0 and e120 <= 15.0
    cur = "; ".join(f"n={int(r.value)}: i_bg {r.i_bg}, scale {r.recurrent_scale}"
                    for r in (small, reference_row))
    verdict("C5 size robustness", ok,
            f"MAE n=60 {e60:.2f} deg, n=120 {e120:.2f} deg, |diff| "
            f"{abs(e60 - e120):.2f} (<= 5), both <= 15; recalibrated {cur}")


def test_c06_rate_sensitivity(config, reference_row, verdict):
    # rate_scale 1.0 is the same calibration as the n = 120 reference
    (low_row,) = robustness_sweep(
        "rate_scale", [0.25], base=config.sim_config(bounded=True),
        trajectory=config.trajectory(),
    )
    assert low_row.error is None, low_row
    low, opt = low_row.mean_abs_error_deg, reference_row.mean_abs_error_deg
    verdict("C6 rate sensitivity", low > opt,
            f"MAE at 25% rate {low:.2f} deg > MAE at optimum {opt:.2f} deg "
            f"(i_bg {low_row.i_bg} vs {reference_row.i_bg})")


def test_c07_hw_drift(config, verdict):
    res = hw_drift(config)
    worst = res.worst_median
    ok = worst < 36.0 and not np.isnan(res.medians).any()
    verdict("C7 hardware drift", ok,
            f"{res.errors.shape[0]} runs, worst 0.5 s-window median {worst:.1f} deg "
            f"(< 36) over 0-5 s post-cue; medians {np.round(res.medians, 1).tolist()}")


def test_c08_hw_velocity_linearity(config, verdict):
    sweep = hw_velocity_sweep(config, counts=[1, 2, 3, 4, 6, 8], repeats=10)
    fit = sweep.fit
    doubling = sweep.doubling()
    pts = ", ".join(f"{p.count}: {p.mean_velocity:.3f}+/-{p.sem:.3f}" for p in sweep.points)
    dbl = ", ".join(f"{k}->{2 * k}: x{r:.2f} {'ok' if w else 'out'}" for k, r, w in doubling)
    ok = fit.r_squared >= 0.9 and all(w for _, _, w in doubling)
    verdict("C8 hardware velocity linearity", ok,
            f"weighted r^2 {fit.r_squared:.3f} (>= 0.9); doubling within 95% CI: [{dbl}]; "
            f"mean velocity rad/s by count [{pts}]")


def test_c09_acceleration_recovery(config, verdict):
    res = hw_accel(config)
    still_a, moving, still_b = res.phases
    limit = POP_SPACING_RAD / 3.0
    ok = (abs(still_a.slope) < limit and abs(still_b.slope) < limit and moving.slope > 0)
    verdict("C9 acceleration/recovery", ok,
            f"slopes {still_a.slope:+.4f}, {moving.slope:+.3f}, {still_b.slope:+.4f} rad/s "
            f"(stationary |slope| < {limit:.4f}, velocity phase > 0)")


def test_c10_invariant_suites(tmp_path, verdict):
    suite = Path(__file__).with_name("test_properties.py")
    xml = tmp_path / "props.xml"
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", str(suite), "-q", "-p", "no:cacheprovider",
         f"--junitxml={xml}"],
        capture_output=True, text=True,
    )
    cases = ET.parse(xml).getroot().iter("testcase")
    times = {c.get("name"): float(c.get("time")) for c in cases}
    slowest = max(times, key=times.get)
    ok = proc.returncode == 0 and len(times) > 0 and max(times.values()) < 30.0
    verdict("C10 invariant suites", ok,
            f"{len(times)} property tests, exit code {proc.returncode}; slowest "
            f"{slowest} {times[slowest]:.2f} s (< 30)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
