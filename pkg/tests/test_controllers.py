from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lolnmpc.controllers import (LolCmd, LolNmpc, StandardCmd, StandardNmpc, estimate_from_telemetry,
                                 lol_command, make_controller, standard_command)
from lolnmpc.exceptions import InvalidParam, VariantMismatch
from lolnmpc.model import QuadModel, thrust_from_rpm
from lolnmpc.ocp import OcpConfig
from lolnmpc.plant import PlantConfig, initial_state, run_closed_loop
from lolnmpc.trajectories import flat_outputs_to_reference, make_hover


def _hover_telemetry(params, position=(0.0, 0.0, 3.0)):
    return QuadModel(params, "lol").hover_state(position=position)


def corner_reference(params, duration=3.0):
    """Position step: an infeasible corner that drives the actuators to their limits."""
    t = np.arange(0.0, duration + 2.0, 0.01)
    p = np.tile([0.0, 0.0, 3.0], (t.size, 1))
    p[t >= 0.5] = [3.0, -2.0, 4.0]
    z = np.zeros_like(p)
    return flat_outputs_to_reference(t, p, z, z.copy(), 0.0, params, {"shape": "corner", "duration": duration})


def test_standard_hover_command(params):
    ref = make_hover(duration=2.0, params=params)
    x = QuadModel(params, "speed").hover_state(position=(0.0, 0.0, 3.0))
    cmd = standard_command(x, ref, params=params)
    assert isinstance(cmd, StandardCmd)
    assert cmd.thrust == pytest.approx(11.772, abs=1e-6)
    np.testing.assert_allclose(cmd.omega_c, 0.0, atol=1e-9)


def test_lol_hover_command(params):
    ref = make_hover(duration=2.0, params=params)
    cmd = lol_command(_hover_telemetry(params), ref, params=params)
    assert isinstance(cmd, LolCmd)
    assert cmd.thrust == pytest.approx(0.3836, abs=5e-5)
    np.testing.assert_allclose(cmd.omega_c, 0.0, atol=1e-9)
    assert cmd.throttle(params) == cmd.thrust


def test_step_in_x_pitches_forward(params):
    ref = make_hover(position=(1.0, 0.0, 3.0), duration=2.0, params=params)
    for kind in ("standard", "lol"):
        ctrl = make_controller(kind, params=params).fit(ref)
        cmd = ctrl.command(0.0, _hover_telemetry(params))
        assert cmd.omega_c[1] > 0.1
        if kind == "standard":
            assert cmd.thrust >= params.weight
        else:
            assert thrust_from_rpm(np.full(4, cmd.thrust), params).sum() >= params.weight


def test_standard_thrust_throttle_mapping(params):
    cmd = StandardCmd(params.weight, np.zeros(3))
    assert cmd.throttle(params) == pytest.approx(params.hover_throttle)


def test_commands_within_bounds_over_a_run(params):
    ref = corner_reference(params, duration=1.5)
    for kind in ("standard", "lol"):
        log = run_closed_loop(make_controller(kind, params=params), ref, plant_config=PlantConfig())
        thr, rates = log.tick_commands[:, 0], log.tick_commands[:, 1:]
        if kind == "lol":
            assert thr.min() >= params.r_min - 1e-9 and thr.max() <= params.r_max + 1e-9
        else:
            assert thr.min() >= 4 * params.f_max * params.r_min**2 - 1e-9
            assert thr.max() <= 4 * params.f_max * params.r_max**2 + 1e-9
        assert np.max(np.abs(rates)) <= params.body_rate_max + 1e-9


def test_lol_mixer_rows_hold_and_ablation_clips(params):
    ref = corner_reference(params)
    log = run_closed_loop(LolNmpc(params=params), ref, plant_config=PlantConfig())
    assert np.nanmin(log.mixer_output) >= params.r_min - 1e-6
    assert np.nanmax(log.mixer_output) <= params.r_max + 1e-6
    free = LolNmpc(params=params, ocp_config=OcpConfig(mixer_rows=False))
    log_free = run_closed_loop(free, ref, plant_config=PlantConfig())
    assert log_free.clip_events >= 1
    assert log_free.clip_events > log.clip_events


@pytest.mark.parametrize("kind", ["standard", "lol"])
def test_prediction_record_at_hover(params, kind):
    ref = make_hover(duration=2.0, params=params)
    ctrl = make_controller(kind, params=params).fit(ref)
    tel = _hover_telemetry(params)
    ctrl.command(0.0, tel)
    rec = ctrl.last_prediction_
    N = ctrl.config_.N
    assert rec.states.shape[0] == N + 1 and rec.forces.shape == (N, 4)
    np.testing.assert_allclose(rec.forces, params.weight / 4, rtol=1e-9)
    np.testing.assert_array_equal(rec.states[0], estimate_from_telemetry(tel, ctrl.model_))


def test_estimator_api(params):
    ctrl = LolNmpc(params=params, rate_hz=50.0)
    assert ctrl.get_params()["rate_hz"] == 50.0
    twin = clone(ctrl)
    assert twin.get_params()["rate_hz"] == 50.0 and twin is not ctrl
    with pytest.raises(NotFittedError):
        ctrl.predict(np.zeros((1, 20)))
    ref = make_hover(duration=2.0, params=params)
    ctrl.fit(ref)
    out = ctrl.predict(np.tile(_hover_telemetry(params), (3, 1)))
    assert out.shape == (3, 4)
    np.testing.assert_allclose(out[:, 0], params.hover_throttle, atol=1e-9)


def test_standard_variants_and_dispatch(params):
    ref = make_hover(duration=2.0, params=params)
    for variant in ("none", "speed", "force"):
        ctrl = make_controller("standard", variant, params=params).fit(ref)
        assert isinstance(ctrl, StandardNmpc) and ctrl.model_.variant == variant
        cmd = ctrl.command(0.0, _hover_telemetry(params))
        assert cmd.thrust == pytest.approx(params.weight, rel=1e-6)
    assert make_controller("lol").fit(ref).model_.variant == "lol"
    with pytest.raises(InvalidParam):
        make_controller("pid")


def test_telemetry_mapping(params):
    tel = initial_state(make_hover(duration=1.0, params=params), params)
    x = estimate_from_telemetry(tel, QuadModel(params, "speed"))
    np.testing.assert_allclose(params.thrust_coeff * x[13:17] ** 2, params.weight / 4)
    x = estimate_from_telemetry(tel, QuadModel(params, "force"))
    np.testing.assert_allclose(x[13:17], params.weight / 4)
    with pytest.raises(VariantMismatch):
        estimate_from_telemetry(np.zeros(13), QuadModel(params, "lol"))


def test_open_loop_motor_estimate_without_rpm_feedback(params):
    ref = make_hover(duration=1.0, params=params)
    ctrl = LolNmpc(params=params, rpm_feedback=False).fit(ref)
    tel = _hover_telemetry(params)
    ctrl.command(0.0, tel)
    bogus = tel.copy()
    bogus[16:20] = 0.9  # ignored: motor state comes from the internal model
    ctrl.command(0.01, bogus)
    np.testing.assert_allclose(ctrl.last_state_[16:20], params.hover_throttle, atol=1e-6)


def test_degraded_solve_falls_back_to_stale(params, monkeypatch):
    ref = make_hover(duration=1.0, params=params)
    ctrl = LolNmpc(params=params).fit(ref)
    first = ctrl.command(0.0, _hover_telemetry(params))
    real = ctrl.solver_.solve

    def broken(*a, **k):
        sol = real(*a, **k)
        sol.degraded = True
        return sol

    monkeypatch.setattr(ctrl.solver_, "solve", broken)
    cmd = ctrl.command(0.01, _hover_telemetry(params))
    assert cmd.stale
    assert cmd.thrust == first.thrust
