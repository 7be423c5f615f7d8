from __future__ import annotations

import math

import numpy as np
import pytest

from lolnmpc import oracles
from lolnmpc.exceptions import NonFiniteState
from lolnmpc.integrator import rk4_step, rk4_step_with_sensitivities
from lolnmpc.model import QuadModel

from conftest import random_unit_quat


def decay(x, u):
    return -x


def test_zero_field_leaves_state_unchanged():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(rk4_step(lambda x, u: np.zeros_like(x), x, np.zeros(1), 0.1), x)


def test_exponential_decay_single_step():
    y = rk4_step(decay, np.array([1.0]), np.zeros(1), 0.1)
    assert y[0] == pytest.approx(0.9048375, abs=1e-7)
    assert abs(y[0] - math.exp(-0.1)) < 1e-7


def test_fourth_order_convergence():
    def err(n):
        x = np.array([1.0])
        for _ in range(n):
            x = rk4_step(decay, x, np.zeros(1), 1.0 / n)
        return abs(x[0] - math.exp(-1.0))

    ratio = err(10) / err(20)
    assert 14.0 < ratio < 18.0


def test_linear_system_sensitivities_are_the_rk4_polynomial(rng):
    Mx = rng.normal(size=(4, 4))
    Nu = rng.normal(size=(4, 2))
    dt = 0.1
    f = lambda x, u: Mx @ x + Nu @ u  # noqa: E731
    _, A, B = rk4_step_with_sensitivities(f, rng.normal(size=4), rng.normal(size=2), dt)
    h = dt * Mx
    I = np.eye(4)
    A_ref = I + h + h @ h / 2 + h @ h @ h / 6 + h @ h @ h @ h / 24
    B_ref = dt * (I + h / 2 + h @ h / 6 + h @ h @ h / 24) @ Nu
    np.testing.assert_allclose(A, A_ref, atol=1e-14)
    np.testing.assert_allclose(B, B_ref, atol=1e-14)


def test_input_free_field_has_zero_B(rng):
    _, _, B = rk4_step_with_sensitivities(lambda x, u: -x**3, rng.normal(size=3), rng.normal(size=2), 0.05)
    np.testing.assert_array_equal(B, 0.0)


def test_generic_callable_matches_finite_differences(rng):
    f = lambda x, u: np.array([x[1], -np.sin(x[0]) + u[0] * np.cos(x[1])])  # noqa: E731
    x, u = rng.normal(size=2), rng.normal(size=1)
    _, A, B = rk4_step_with_sensitivities(f, x, u, 0.1, 3)
    A_fd = oracles.central_difference_jacobian(lambda s: rk4_step(f, s, u, 0.1, 3), x)
    B_fd = oracles.central_difference_jacobian(lambda s: rk4_step(f, x, s, 0.1, 3), u)
    np.testing.assert_allclose(A, A_fd, rtol=1e-7, atol=1e-8)
    np.testing.assert_allclose(B, B_fd, rtol=1e-7, atol=1e-8)


@pytest.mark.parametrize("variant", ["none", "speed", "force", "lol"])
def test_quadrotor_sensitivities_vs_fd_of_independent_dynamics(params, rng, variant):
    m = QuadModel(params, variant)
    x = m.hover_state(position=rng.normal(size=3))
    x[3:7] = random_unit_quat(rng)
    x[7:13] = rng.normal(size=6)
    if variant == "lol":
        x[13:16] = 0.1 * rng.normal(size=3)
    u = m.hover_input() * rng.uniform(0.9, 1.1, 4)
    dt, sub = 0.02, 2
    _, A, B = rk4_step_with_sensitivities(m, x, u, dt, sub)
    A_fd = oracles.central_difference_jacobian(lambda s: oracles.reference_rk4(s, u, params, dt, sub, variant), x)
    B_fd = oracles.central_difference_jacobian(lambda s: oracles.reference_rk4(x, s, params, dt, sub, variant), u)
    # columns in relative units so rad/s motor states and unit quaternions compare alike
    sx, su = np.maximum(1, np.abs(x)), np.maximum(1, np.abs(u))
    J = np.hstack([A * sx, B * su])
    J_fd = np.hstack([A_fd * sx, B_fd * su])
    assert np.max(np.abs(J - J_fd)) / np.max(np.abs(J_fd)) < 1e-5


def test_quaternion_renormalized_and_canonical(params):
    m = QuadModel(params, "lol")
    x = m.hover_state()
    x[10:13] = [4.0, -3.0, 2.0]
    for _ in range(100):
        x = rk4_step(m, x, m.hover_input(), 0.02, 2)
        assert abs(np.linalg.norm(x[3:7]) - 1) < 1e-14
        assert x[3] >= 0


def test_raw_step_keeps_unnormalized_quaternion(params):
    m = QuadModel(params, "lol")
    x = m.hover_state()
    x[10:13] = [4.0, -3.0, 2.0]
    y = rk4_step(m, x, m.hover_input(), 0.1, renormalize=False)
    assert abs(np.linalg.norm(y[3:7]) - 1) > 1e-12


def test_rejects_bad_step_and_non_finite():
    with pytest.raises(ValueError):
        rk4_step(decay, np.ones(1), np.zeros(1), 0.0)
    with pytest.raises(NonFiniteState):
        rk4_step(lambda x, u: np.full_like(x, np.nan), np.ones(1), np.zeros(1), 0.1)
