from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lolnmpc import so3
from lolnmpc.exceptions import DegenerateQuaternion

from conftest import random_unit_quat

C45 = np.cos(np.pi / 4)


def test_identity_is_neutral(rng):
    q = random_unit_quat(rng)
    np.testing.assert_allclose(so3.quat_multiply(so3.IDENTITY, q), q, atol=1e-15)
    np.testing.assert_allclose(so3.quat_multiply(q, so3.IDENTITY), q, atol=1e-15)


def test_two_quarter_turns_about_z_make_a_half_turn():
    q90 = np.array([C45, 0.0, 0.0, C45])
    np.testing.assert_allclose(so3.quat_multiply(q90, q90), [0.0, 0.0, 0.0, 1.0], atol=1e-15)


def test_product_matches_rotation_composition(rng):
    for _ in range(20):
        a, b = random_unit_quat(rng), random_unit_quat(rng)
        ab = so3.quat_multiply(a, b)
        assert abs(np.linalg.norm(ab) - 1.0) < 1e-12
        R = Rotation.from_quat(a, scalar_first=True) * Rotation.from_quat(b, scalar_first=True)
        np.testing.assert_allclose(so3.rotation_matrix(ab), R.as_matrix(), atol=1e-12)


def test_rotate_identity_and_half_turn():
    np.testing.assert_allclose(so3.quat_rotate(so3.IDENTITY, [1, 2, 3]), [1, 2, 3])
    np.testing.assert_allclose(so3.quat_rotate([0, 0, 0, 1], [1, 0, 0]), [-1, 0, 0], atol=1e-15)


def test_rotate_matches_independent_matrix(rng):
    for _ in range(20):
        q = random_unit_quat(rng)
        v = rng.normal(size=3)
        R = Rotation.from_quat(q, scalar_first=True).as_matrix()
        np.testing.assert_allclose(so3.quat_rotate(q, v), R @ v, atol=1e-12)
        np.testing.assert_allclose(so3.rotation_matrix(q), R, atol=1e-12)


def test_quat_derivative_cases(rng):
    q = random_unit_quat(rng)
    np.testing.assert_array_equal(so3.quat_derivative(q, [0, 0, 0]), np.zeros(4))
    np.testing.assert_allclose(so3.quat_derivative(so3.IDENTITY, [0, 0, 2]), [0, 0, 0, 1])
    for _ in range(10):
        q = random_unit_quat(rng)
        assert abs(q @ so3.quat_derivative(q, rng.normal(size=3))) < 1e-14


def test_normalize_canonicalizes():
    np.testing.assert_array_equal(so3.normalize([2, 0, 0, 0]), [1, 0, 0, 0])
    np.testing.assert_array_equal(so3.normalize([-1, 0, 0, 0]), [1, 0, 0, 0])
    with pytest.raises(DegenerateQuaternion):
        so3.normalize([0, 0, 0, 0])


def test_quaternion_error_quarter_turn():
    e = so3.quaternion_error(so3.IDENTITY, [C45, 0, 0, C45])
    np.testing.assert_allclose(e, [0, 0, 2 * np.sin(np.pi / 4)], atol=1e-12)
    np.testing.assert_allclose(so3.quaternion_error([C45, 0, 0, C45], so3.IDENTITY),
                               [0, 0, -1.41421356], atol=1e-8)


def test_quaternion_error_zero_and_shortest_arc(rng):
    q = random_unit_quat(rng)
    np.testing.assert_allclose(so3.quaternion_error(q, q), 0.0, atol=1e-15)
    # -q is the same rotation
    np.testing.assert_allclose(so3.quaternion_error(q, -q), 0.0, atol=1e-15)


def test_quaternion_error_left_invariant(rng):
    for _ in range(10):
        a, b, c = (random_unit_quat(rng) for _ in range(3))
        e1 = so3.quaternion_error(a, b)
        e2 = so3.quaternion_error(so3.quat_multiply(c, a), so3.quat_multiply(c, b))
        np.testing.assert_allclose(e1, e2, atol=1e-12)


def test_rotation_matrix_round_trip(rng):
    for _ in range(20):
        q = random_unit_quat(rng)
        np.testing.assert_allclose(so3.from_rotation_matrix(so3.rotation_matrix(q)), q, atol=1e-12)


def test_slerp_endpoints_and_midpoint(rng):
    a = so3.IDENTITY
    b = so3.from_yaw(1.0)
    np.testing.assert_allclose(so3.slerp(a, b, 0.0), a, atol=1e-15)
    np.testing.assert_allclose(so3.slerp(a, b, 1.0), b, atol=1e-15)
    np.testing.assert_allclose(so3.slerp(a, b, 0.5), so3.from_yaw(0.5), atol=1e-12)
