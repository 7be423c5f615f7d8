from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from lolnmpc.bench import BENCH_NOISE, position_rmse
from lolnmpc.controllers import LolCmd, LolNmpc, StandardNmpc
from lolnmpc.exceptions import InvalidParam
from lolnmpc.model import QuadModel
from lolnmpc.plant import (LOG_COLUMNS, Desaturation, Plant, PlantConfig, _desaturate, low_level_tick,
                           run_closed_loop)
from lolnmpc.trajectories import make_hover, make_preset


def _hover_plant(params, **cfg):
    x0 = QuadModel(params, "lol").hover_state(position=(0.0, 0.0, 3.0))
    return Plant(params, PlantConfig(**cfg), x0)


def test_hover_command_holds_position(params):
    plant = _hover_plant(params)
    plant.advance(np.full(2000, params.hover_throttle), np.zeros((2000, 3)))
    assert np.linalg.norm(plant.x[:3] - [0.0, 0.0, 3.0]) < 1e-3
    assert plant.clip_count == 0
    assert plant.t == pytest.approx(2.0)


def test_zero_command_motor_decay(params):
    plant = _hover_plant(params)
    r0 = plant.x[16:20].copy()
    for _ in range(50):
        low_level_tick(plant, LolCmd(0.0, np.zeros(3)))
    np.testing.assert_allclose(plant.x[16:20], r0 * np.exp(-0.05 / params.k_mot), rtol=1e-6)


def test_saturating_command_counts_clips(params):
    plant = _hover_plant(params)
    plant.advance(np.full(20, 0.9), np.tile([6.0, 0.0, 0.0], (20, 1)))
    assert plant.clip_count > 0


def test_collective_shift_keeps_torque_ordering():
    rc = np.array([1.2, 0.9, 1.1, 0.8])
    out = rc.copy()
    assert _desaturate(out, 1)
    assert out.max() <= 1.0 and out.min() >= 0.0
    np.testing.assert_array_equal(np.argsort(out), np.argsort(rc))
    np.testing.assert_allclose(out - out.mean(), rc - rc.mean(), atol=1e-15)
    wide = np.array([1.5, -0.5, 0.5, 0.5])
    out = wide.copy()
    _desaturate(out, 1)
    np.testing.assert_array_equal(np.argsort(out, kind="stable"), np.argsort(wide, kind="stable"))
    assert out.max() <= 1.0 and out.min() >= 0.0


def test_clip_policy_clamps_independently():
    out = np.array([1.2, 0.9, -0.1, 0.8])
    assert _desaturate(out, 0)
    np.testing.assert_array_equal(out, [1.0, 0.9, 0.0, 0.8])
    inside = np.array([0.2, 0.3, 0.4, 0.5])
    assert not _desaturate(inside.copy(), 0)


def test_hover_regulation(params):
    ref = make_hover(duration=10.0, params=params)
    log = run_closed_loop(LolNmpc(params=params), ref, record_predictions=False)
    assert position_rmse(log, ref) < 0.01


def test_scheduling_ten_substeps_per_tick(params):
    cfg = PlantConfig()
    assert cfg.ticks_per_control == 10
    ref = make_hover(duration=0.5, params=params)
    log = run_closed_loop(LolNmpc(params=params), ref, plant_config=cfg)
    assert log.tick_t.size == 50
    assert log.t.size == 50 * 10 + 1
    np.testing.assert_allclose(np.diff(log.tick_t), 0.01)
    np.testing.assert_array_equal(log.tick_states, log.states[::10][:50])


def test_identical_seeds_give_identical_logs(params):
    ref = make_preset("fig8", 2.0, params=params)
    cfg = PlantConfig(noise_std=BENCH_NOISE)
    a = run_closed_loop(StandardNmpc(params=params), ref, 1.0, cfg, seed=7)
    b = run_closed_loop(StandardNmpc(params=params), ref, 1.0, cfg, seed=7)
    c = run_closed_loop(StandardNmpc(params=params), ref, 1.0, cfg, seed=8)
    for name in ("states", "commands", "clip_counts", "tick_commands", "mixer_output"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.states, c.states)
    assert a.metadata["config_hash"] == b.metadata["config_hash"] != c.metadata["config_hash"]


def test_latency_delays_the_command(params):
    ref = make_preset("fig8", 2.5, params=params)
    for latency in (0, 10):
        cfg = PlantConfig(latency_ticks=latency)
        log = run_closed_loop(LolNmpc(params=params), ref, 0.05, cfg, record_predictions=False)
        rates = log.commands[:, 1:]
        # substep i+1 integrates under the command in effect on [i h, (i+1) h)
        np.testing.assert_array_equal(rates[1 : latency + 1], np.tile(rates[0], (latency, 1)))
        np.testing.assert_array_equal(rates[latency + 1], log.tick_commands[0, 1:])
        assert not np.array_equal(log.tick_commands[0, 1:], rates[0])


def test_flight_log_files(params, tmp_path):
    ref = make_hover(duration=0.2, params=params)
    log = run_closed_loop(LolNmpc(params=params), ref, seed=3)
    path = log.write_csv(tmp_path / "log.csv")
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == LOG_COLUMNS
    assert len(rows) == log.t.size + 1
    meta = json.loads(log.write_metadata(tmp_path / "log.json").read_text())
    assert meta["seed"] == 3
    assert {"config_hash", "versions", "plant", "vehicle"} <= set(meta)
    assert set(log.summary()) >= {"max_speed", "clip_events", "mean_solve_us"}


def test_config_validation():
    with pytest.raises(InvalidParam):
        PlantConfig(control_hz=300.0)
    with pytest.raises(InvalidParam):
        PlantConfig(latency_ticks=-1)
    with pytest.raises(InvalidParam):
        PlantConfig(noise_std=(0.1, -0.1, 0, 0))
    assert PlantConfig(desaturation="clip").desaturation is Desaturation.CLIP
