from __future__ import annotations

import numpy as np
import pytest

from lolnmpc import so3
from lolnmpc.exceptions import FreeFallSingularity, InvalidParam, ParseError
from lolnmpc.trajectories import (CSV_COLUMNS, G0, flat_outputs_to_reference, load_csv, make_fig8,
                                  make_hover, make_hypotrochoid, make_preset, save_csv)


def _numeric_peak_accel(ref):
    """Peak acceleration from second differences of the sampled positions."""
    a = np.gradient(np.gradient(ref.p, ref.dt, axis=0), ref.dt, axis=0)
    inside = ref.t <= ref.duration
    return np.max(np.linalg.norm(a[inside][2:-2], axis=1))


def test_fig8_hits_target_accel(params):
    ref = make_fig8(size=10.0, target_accel=2.5, dt=0.002, params=params)
    assert 2.45 * G0 <= _numeric_peak_accel(ref) <= 2.55 * G0


def test_unslanted_fig8_is_level(params):
    ref = make_fig8(target_accel=2.5, params=params)
    assert np.ptp(ref.p[:, 2]) < 1e-12


def test_slanted_fig8_leaves_the_plane(params):
    ref = make_preset("slanted_fig8", 2.5, params=params)
    assert np.ptp(ref.p[:, 2]) > 1.0


def _lap_aligned(factory, **kw):
    """Rebuild a trajectory on a grid that lands exactly on the lap time."""
    lap = factory(**kw).meta["lap_time"]
    return factory(dt=lap / 4000, **kw), 4000


def test_fig8_closes_after_one_lap(params):
    ref, n = _lap_aligned(make_fig8, target_accel=2.5, params=params)
    np.testing.assert_allclose(ref.p[n], ref.p[0], atol=1e-9)
    np.testing.assert_allclose(ref.v[n], ref.v[0], atol=1e-9)


def test_hypotrochoid_closes_after_lcm_period(params):
    ref, n = _lap_aligned(make_hypotrochoid, target_accel=3.5, params=params)
    np.testing.assert_allclose(ref.p[n], ref.p[0], atol=1e-9)
    # and not earlier: the partial lap at a third of the period is elsewhere
    assert np.linalg.norm(ref.p[n // 3] - ref.p[0]) > 1.0


def test_hypotrochoid_peak_within_two_percent(params):
    ref = make_hypotrochoid(target_accel=3.5, dt=0.002, params=params)
    assert _numeric_peak_accel(ref) == pytest.approx(3.5 * G0, rel=0.02)


def test_circle_special_case(params):
    R, r = 12.0, 4.0
    ref = make_hypotrochoid(R, r, 0.0, target_accel=1.0, params=params)
    radius = np.linalg.norm(ref.p[:, :2], axis=1)
    np.testing.assert_allclose(radius, R - r, atol=1e-9)
    speed = np.linalg.norm(ref.v, axis=1)
    np.testing.assert_allclose(np.linalg.norm(ref.a, axis=1), speed**2 / (R - r), rtol=1e-9)


def test_hover_attitude_is_level(params):
    ref = make_hover(duration=2.0, params=params)
    np.testing.assert_allclose(ref.q, np.tile([1, 0, 0, 0], (len(ref), 1)), atol=1e-12)
    np.testing.assert_allclose(ref.omega, 0.0, atol=1e-12)
    np.testing.assert_allclose(ref.collective_thrust(params), params.weight, rtol=1e-12)


def test_level_circle_bank_angle(params):
    no_drag = params.replace(drag=(0.0, 0.0, 0.0))
    ref = make_hypotrochoid(12.0, 4.0, 0.0, target_accel=1.5, params=no_drag)
    zb = np.array([so3.rotation_matrix(q)[:, 2] for q in ref.q])
    bank = np.arccos(np.clip(zb[:, 2], -1, 1))
    a_lat = np.linalg.norm(ref.a[:, :2], axis=1)
    np.testing.assert_allclose(bank, np.arctan(a_lat / no_drag.gravity), atol=1e-9)


def test_body_rates_integrate_back_to_attitude(params):
    ref = make_fig8(target_accel=2.5, params=params, dt=0.002)
    q = ref.q[0].copy()
    worst = 0.0
    lap = ref.t <= ref.meta["lap_time"]
    for k in range(int(np.sum(lap)) - 1):
        w0, w1 = ref.omega[k], ref.omega[k + 1]
        h = ref.dt
        wm = 0.5 * (w0 + w1)
        k1 = so3.quat_derivative(q, w0)
        k2 = so3.quat_derivative(q + 0.5 * h * k1, wm)
        k3 = so3.quat_derivative(q + 0.5 * h * k2, wm)
        k4 = so3.quat_derivative(q + h * k3, w1)
        q = so3.normalize(q + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
        worst = max(worst, np.linalg.norm(so3.quaternion_error(ref.q[k + 1], q)))
    assert worst < 1e-3


def test_sample_interpolates_and_holds_ends(params):
    ref = make_hover(duration=1.0, params=params)
    s = ref.sample([-1.0, 0.0, 0.505, 100.0])
    np.testing.assert_allclose(s["p"], np.tile(ref.p[0], (4, 1)))
    assert ref.states([0.3]).shape == (1, 13)


def test_csv_round_trip(tmp_path, params):
    ref = make_fig8(target_accel=2.0, params=params, dt=0.01)
    path = tmp_path / "ref.csv"
    save_csv(ref, path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    back = load_csv(path, params)
    for name in ("t", "p", "q", "v", "omega"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ref, name))


def test_csv_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy\n0,0,0,0,1,0,0,0,0,0,0,0,0\n")
    with pytest.raises(ParseError, match="wz") as exc:
        load_csv(path)
    assert exc.value.column == "wz"


def test_csv_non_uniform_grid(tmp_path):
    rows = [",".join(CSV_COLUMNS)]
    for t in (0.0, 0.01, 0.02, 0.0305, 0.04):
        rows.append(",".join([str(t), "0", "0", "0", "1"] + ["0"] * 9))
    path = tmp_path / "grid.csv"
    path.write_text("\n".join(rows) + "\n")
    with pytest.raises(ParseError, match="uniform"):
        load_csv(path)


def test_invalid_inputs(params):
    with pytest.raises(InvalidParam):
        make_fig8(target_accel=0.0, params=params)
    with pytest.raises(InvalidParam):
        make_preset("spiral", 2.0)
    with pytest.raises(InvalidParam):
        make_hypotrochoid(4.0, 6.0, 1.0)
    t = np.arange(5) * 0.01
    z = np.zeros((5, 3))
    with pytest.raises(FreeFallSingularity):
        flat_outputs_to_reference(t, z, z, np.tile([0, 0, -9.81], (5, 1)), 0.0, params)
