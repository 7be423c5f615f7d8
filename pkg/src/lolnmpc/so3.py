"""Quaternion and rotation helpers.

Quaternions are stored scalar-first, ``(w, x, y, z)``, Hamilton convention.
Every function returning a unit quaternion canonicalizes it to ``w >= 0``.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DegenerateQuaternion

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

_EPS_NORM = 1e-12


def normalize(q: ArrayLike) -> NDArray[np.float64]:
    """Scale ``q`` to unit norm with non-negative scalar part."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not n > _EPS_NORM:
        raise DegenerateQuaternion(f"cannot normalize quaternion with norm {n:.3e}")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def _hamilton(a: NDArray, b: NDArray) -> NDArray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_multiply(a: ArrayLike, b: ArrayLike) -> NDArray[np.float64]:
    """Hamilton product ``a ⊗ b``, normalized."""
    return normalize(_hamilton(np.asarray(a, dtype=float), np.asarray(b, dtype=float)))


def quat_conjugate(q: ArrayLike) -> NDArray[np.float64]:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def rotation_matrix(q: ArrayLike) -> NDArray[np.float64]:
    """Body-to-world rotation matrix of a unit quaternion."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_rotate(q: ArrayLike, v: ArrayLike) -> NDArray[np.float64]:
    """Rotate ``v`` from body to world frame: ``R(q) v``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    # v' = v + 2 w (u x v) + 2 u x (u x v)
    u = q[1:]
    t = 2.0 * np.cross(u, v)
    return v + q[0] * t + np.cross(u, t)


def quat_derivative(q: ArrayLike, omega: ArrayLike) -> NDArray[np.float64]:
    """Time derivative ``0.5 * q ⊗ (0, omega)`` for body rates ``omega``."""
    q = np.asarray(q, dtype=float)
    w = np.asarray(omega, dtype=float)
    return 0.5 * _hamilton(q, np.array([0.0, w[0], w[1], w[2]]))


def from_rotation_matrix(R: ArrayLike) -> NDArray[np.float64]:
    """Unit quaternion from a proper rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return normalize(q)


def from_axis_angle(axis: ArrayLike, angle: float) -> NDArray[np.float64]:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return normalize(np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis]))


def from_yaw(psi: float) -> NDArray[np.float64]:
    return from_axis_angle([0.0, 0.0, 1.0], psi)


def quaternion_error(q_ref: ArrayLike, q: ArrayLike) -> NDArray[np.float64]:
    """Three-parameter attitude error ``2 vec(q_ref^-1 ⊗ q)``, shortest arc.

    Zero iff both quaternions describe the same rotation.
    """
    d = _hamilton(quat_conjugate(q_ref), np.asarray(q, dtype=float))
    if d[0] < 0.0:
        d = -d
    return 2.0 * d[1:]


def slerp(q0: ArrayLike, q1: ArrayLike, s: float) -> NDArray[np.float64]:
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1 = -q1
        d = -d
    if d > 0.9995:
        return normalize(q0 + s * (q1 - q0))
    theta = np.arccos(min(d, 1.0))
    st = np.sin(theta)
    return normalize((np.sin((1 - s) * theta) * q0 + np.sin(s * theta) * q1) / st)
