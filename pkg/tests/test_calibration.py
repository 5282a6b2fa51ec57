import json
import math
from dataclasses import replace

import numpy as np
import pytest

from ringattractor.calibration import (
    DEAD_PENALTY,
    SENTINEL_LOSS,
    CalibrationObjective,
    CalibrationResult,
    ProbeFit,
    expand_space,
    grid_search,
    kappa,
    recalibrate_currents,
    refine_gsin,
    robustness_sweep,
    save_report,
    stationarity_loss,
    velocity_match_loss,
)
from ringattractor.ring import GainSet
from ringattractor.trajectory import make_trajectory

PUBLISHED = GainSet()


@pytest.fixture(scope="module")
def base(default_cfg):
    return default_cfg.sim_config()


@pytest.fixture(scope="module")
def refined(base):
    start = CalibrationResult(gains=GainSet(), i_bg=4.5, init_current=2.0, loss=0.0,
                              recurrent_scale=6.0)
    return refine_gsin(start, CalibrationObjective(), base)


def test_expand_space_forms():
    names, pts = expand_space({"i_bg": (1.0, 2.0, 3), "init_current": [0.5, 1.5],
                               "recurrent_scale": 6})
    assert names == ["i_bg", "init_current", "recurrent_scale"]
    assert len(pts) == 6
    assert pts[0] == (1.0, 0.5, 6.0) and pts[-1] == (2.0, 1.5, 6.0)
    names, pts = expand_space({"i_bg": {"min": 1.0, "max": 3.0, "steps": 1}})
    assert pts == [(1.0,)]
    _, pts = expand_space({"i_bg": {"values": [4.0, 5.0]}})
    assert pts == [(4.0,), (5.0,)]


@pytest.mark.parametrize("space", [{}, {"tau_m": [1.0]}, {"i_bg": (1, 2, 0)}, {"i_bg": []}])
def test_expand_space_rejects(space):
    with pytest.raises(ValueError):
        expand_space(space)


def test_budget_exceeded_raises_before_running(base):
    with pytest.raises(ValueError, match="budget"):
        grid_search({"i_bg": (3.0, 5.0, 10)}, base=base, budget=5)


def test_single_point_grid(base):
    res = grid_search({"i_bg": [4.5]}, base=base)
    assert len(res) == 1
    assert res[0].grid_index == 0
    assert res[0].i_bg == 4.5
    assert res[0].loss == pytest.approx(stationarity_loss(base, CalibrationObjective()))


def test_grid_sorted_is_permutation_and_ties_keep_order(base):
    # duplicate points tie exactly; the earlier grid index must come first
    res = grid_search({"i_bg": [4.5, 4.0, 4.5, 0.5]}, base=base)
    assert sorted(r.grid_index for r in res) == [0, 1, 2, 3]
    losses = [r.loss for r in res]
    assert losses == sorted(losses)
    dup = [r.grid_index for r in res if r.i_bg == 4.5]
    assert dup == [0, 2]
    # subthreshold background: no bump survives
    dead = next(r for r in res if r.grid_index == 3)
    assert dead.loss >= DEAD_PENALTY


def test_invalid_grid_point_gets_sentinel(base):
    res = grid_search({"g_inh": [-16.46, 1.0]}, base=base)
    bad = next(r for r in res if r.grid_index == 1)
    assert bad.loss == SENTINEL_LOSS
    assert bad.warning
    assert res[0].grid_index == 0


def test_published_gains_rank_in_top_decile(base):
    steps = (-2, -1, 0, 1, 2)
    space = {
        "g_inh": [PUBLISHED.g_inh * (1 + 0.2 * k) for k in steps],
        "g_cos": [PUBLISHED.g_cos * (1 + 0.2 * k) for k in steps],
    }
    res = grid_search(space, base=base)
    # the unperturbed point sits at the centre of the 5x5 grid
    rank = [r.grid_index for r in res].index(12)
    assert res[rank].gains.g_inh == pytest.approx(PUBLISHED.g_inh)
    assert res[rank].gains.g_cos == pytest.approx(PUBLISHED.g_cos)
    assert rank < 0.1 * len(res)


@pytest.mark.parametrize(
    "kw",
    [
        {"velocity_set": (0.2, 0.5)},
        {"velocity_set": (-0.5, 0.0, 0.5)},
        {"loss_weights": (0.0, 0.0, 0.0)},
        {"loss_weights": (1.0, -1.0, 1.0)},
        {"loss_weights": (1.0, 1.0)},
        {"target_peak_rate": 0.0},
        {"probe_duration": 0.3},
    ],
)
def test_objective_validation(kw):
    with pytest.raises(ValueError):
        CalibrationObjective(**kw)


def test_velocity_match_loss_and_kappa():
    probes = [ProbeFit(-1.0, -0.9, 0.01), ProbeFit(1.0, 1.1, 0.01)]
    assert velocity_match_loss(probes) == pytest.approx(0.02)
    k, _ = kappa(probes)
    assert k == pytest.approx(1.0)
    assert velocity_match_loss(probes + [ProbeFit(0.5, math.nan, math.nan)]) == SENTINEL_LOSS
    assert math.isnan(kappa([ProbeFit(1.0, math.nan, math.nan)])[0])


def test_refine_matches_velocity(refined):
    assert refined.converged
    assert abs(refined.velocity_gain_kappa - 1.0) <= 0.05
    assert all(abs(p.rel_error) < 0.10 for p in refined.diagnostics)
    assert refined.loss < SENTINEL_LOSS


def test_refine_from_calibrated_point_stays(base, refined):
    again = refine_gsin(refined, CalibrationObjective(), base)
    assert again.gains.g_sin == pytest.approx(refined.gains.g_sin, rel=0.02)
    assert again.loss <= refined.loss


def test_refine_from_doubled_gain_moves_back(base, refined):
    g_cal = refined.gains.g_sin
    doubled = replace(refined, gains=replace(refined.gains, g_sin=2 * g_cal))
    out = refine_gsin(doubled, CalibrationObjective(), base)
    assert abs(out.gains.g_sin - g_cal) < abs(2 * g_cal - g_cal)


def test_refine_rejects_dead_base(base):
    dead = CalibrationResult(gains=GainSet(), i_bg=0.5, init_current=2.0, loss=0.0)
    with pytest.raises(ValueError, match="bump"):
        refine_gsin(dead, CalibrationObjective(), base)


def test_robustness_single_value_row(base):
    traj = make_trajectory("synthetic-trapezoid", {
        "initial_angle": 2.0, "segments": [(0.3, 0.0), (0.5, 0.5)]})
    rows = robustness_sweep("n_neurons", [120], base=base, trajectory=traj, recalibrate=False)
    assert len(rows) == 1
    assert rows[0].value == 120 and rows[0].error is None
    assert np.isfinite(rows[0].mean_abs_error_deg)
    assert rows[0].i_bg == base.neuron.i_bg


def test_robustness_rejects_bad_input(base):
    with pytest.raises(ValueError):
        robustness_sweep("tau_m", [1.0], base=base)
    with pytest.raises(ValueError):
        robustness_sweep("n_neurons", [], base=base)
    rows = robustness_sweep("rate_scale", [-1.0], base=base, recalibrate=False)
    assert rows[0].error and math.isnan(rows[0].mean_abs_error_deg)


def test_save_report_roundtrip(tmp_path, refined):
    path = tmp_path / "cal.json"
    save_report(path, [refined], refined)
    doc = json.loads(path.read_text())
    assert doc["best"]["gains"]["g_sin"] == pytest.approx(refined.gains.g_sin)
    assert len(doc["best"]["diagnostics"]) == len(refined.diagnostics)


def test_recalibrate_skips_dead_current(base):
    out = recalibrate_currents(base, CalibrationObjective(), i_bg_grid=[0.5, 4.5],
                               scale_grid=[6.0], keep=1)
    assert out.neuron.i_bg == 4.5 and out.recurrent_scale == 6.0


def test_recalibrate_rejects_all_dead_grid(base):
    with pytest.raises(ValueError):
        recalibrate_currents(base, CalibrationObjective(), i_bg_grid=[0.5], scale_grid=[6.0])
