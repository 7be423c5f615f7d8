"""Compiled dynamics kernels.

All kernels are written on scalars so that the same source runs on float64
and complex128 arrays; the complex path is what the RK4 sensitivity code uses
for complex-step differentiation.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MODEL_NONE = 0
MODEL_SPEED = 1
MODEL_FORCE = 2
MODEL_LOL = 3

# Rows of the flight-stack mixer, columns (throttle, tau_x, tau_y, tau_z).
MIXER = np.array(
    [
        [1.0, -0.7071, -0.7071, -1.0],
        [1.0, 0.7071, 0.7071, -1.0],
        [1.0, -0.7071, 0.7071, 1.0],
        [1.0, 0.7071, -0.7071, 1.0],
    ]
)

# The mixer numbers motors differently from the allocation matrix: frame
# motor i is mixer motor MIXER_TO_FRAME[i].
MIXER_TO_FRAME = np.array([3, 0, 2, 1])
FRAME_TO_MIXER = np.argsort(MIXER_TO_FRAME)

SQRT1_2 = 0.7071067811865476

_CASE_DIMS = {MODEL_NONE: (13, 4), MODEL_SPEED: (17, 4), MODEL_FORCE: (17, 4), MODEL_LOL: (20, 4)}


def dims(model: int) -> tuple[int, int]:
    return _CASE_DIMS[model]


@njit(cache=True)
def _rigid_body(x, f0, f1, f2, f3, P, out):
    """Write d/dt of (p, q, v, omega) into out[0:13]; forces in frame order."""
    qw, qx, qy, qz = x[3], x[4], x[5], x[6]
    vx, vy, vz = x[7], x[8], x[9]
    wx, wy, wz = x[10], x[11], x[12]

    out[0] = vx
    out[1] = vy
    out[2] = vz

    out[3] = 0.5 * (-qx * wx - qy * wy - qz * wz)
    out[4] = 0.5 * (qw * wx + qy * wz - qz * wy)
    out[5] = 0.5 * (qw * wy - qx * wz + qz * wx)
    out[6] = 0.5 * (qw * wz + qx * wy - qy * wx)

    r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
    r01 = 2.0 * (qx * qy - qw * qz)
    r02 = 2.0 * (qx * qz + qw * qy)
    r10 = 2.0 * (qx * qy + qw * qz)
    r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
    r12 = 2.0 * (qy * qz - qw * qx)
    r20 = 2.0 * (qx * qz - qw * qy)
    r21 = 2.0 * (qy * qz + qw * qx)
    r22 = 1.0 - 2.0 * (qx * qx + qy * qy)

    # body-frame velocity R^T v
    bx = r00 * vx + r10 * vy + r20 * vz
    by = r01 * vx + r11 * vy + r21 * vz
    bz = r02 * vx + r12 * vy + r22 * vz
    fx = -P[11] * bx
    fy = -P[12] * by
    fz = f0 + f1 + f2 + f3 - P[13] * bz
    m = P[0]
    out[7] = (r00 * fx + r01 * fy + r02 * fz) / m
    out[8] = (r10 * fx + r11 * fy + r12 * fz) / m
    out[9] = (r20 * fx + r21 * fy + r22 * fz) / m - P[20]

    a = P[4] * SQRT1_2
    kap = P[5]
    tx = a * (f0 - f1 - f2 + f3)
    ty = a * (-f0 - f1 + f2 + f3)
    tz = kap * (f0 - f1 + f2 - f3)
    jx, jy, jz = P[1], P[2], P[3]
    out[10] = (tx - (wy * jz * wz - wz * jy * wy)) / jx
    out[11] = (ty - (wz * jx * wx - wx * jz * wz)) / jy
    out[12] = (tz - (wx * jy * wy - wy * jx * wx)) / jz


@njit(cache=True)
def lol_mixer_output(x, u, P, r_c):
    """Commanded normalized motor speeds (mixer order) of the modelled PID + mixer."""
    tc = u[0]
    t0 = P[14] * (u[1] - x[10]) + P[17] * x[13]
    t1 = P[15] * (u[2] - x[11]) + P[18] * x[14]
    t2 = P[16] * (u[3] - x[12]) + P[19] * x[15]
    for i in range(4):
        r_c[i] = MIXER[i, 0] * tc + MIXER[i, 1] * t0 + MIXER[i, 2] * t1 + MIXER[i, 3] * t2


@njit(cache=True)
def dynamics(model, x, u, P, out):
    if model == MODEL_NONE:
        _rigid_body(x, u[0], u[1], u[2], u[3], P, out)
    elif model == MODEL_SPEED:
        cf = P[6]
        _rigid_body(x, cf * x[13] * x[13], cf * x[14] * x[14], cf * x[15] * x[15],
                    cf * x[16] * x[16], P, out)
        for i in range(4):
            out[13 + i] = (u[i] - x[13 + i]) / P[9]
    elif model == MODEL_FORCE:
        _rigid_body(x, x[13], x[14], x[15], x[16], P, out)
        for i in range(4):
            out[13 + i] = (u[i] - x[13 + i]) / P[10]
    else:
        fmax = P[7]
        # mixer-order forces mapped onto frame order
        g0 = fmax * x[16 + MIXER_TO_FRAME[0]] * x[16 + MIXER_TO_FRAME[0]]
        g1 = fmax * x[16 + MIXER_TO_FRAME[1]] * x[16 + MIXER_TO_FRAME[1]]
        g2 = fmax * x[16 + MIXER_TO_FRAME[2]] * x[16 + MIXER_TO_FRAME[2]]
        g3 = fmax * x[16 + MIXER_TO_FRAME[3]] * x[16 + MIXER_TO_FRAME[3]]
        _rigid_body(x, g0, g1, g2, g3, P, out)
        out[13] = u[1] - x[10]
        out[14] = u[2] - x[11]
        out[15] = u[3] - x[12]
        tc = u[0]
        t0 = P[14] * (u[1] - x[10]) + P[17] * x[13]
        t1 = P[15] * (u[2] - x[11]) + P[18] * x[14]
        t2 = P[16] * (u[3] - x[12]) + P[19] * x[15]
        for i in range(4):
            rc = MIXER[i, 0] * tc + MIXER[i, 1] * t0 + MIXER[i, 2] * t1 + MIXER[i, 3] * t2
            out[16 + i] = (rc - x[16 + i]) / P[9]


@njit(cache=True)
def rk4(model, x, u, dt, nsub, P):
    """Classic RK4 with ``nsub`` equal substeps, input held constant."""
    n = x.shape[0]
    h = dt / nsub
    y = x.copy()
    k1 = np.empty_like(y)
    k2 = np.empty_like(y)
    k3 = np.empty_like(y)
    k4 = np.empty_like(y)
    tmp = np.empty_like(y)
    for _ in range(nsub):
        dynamics(model, y, u, P, k1)
        for i in range(n):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        dynamics(model, tmp, u, P, k2)
        for i in range(n):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        dynamics(model, tmp, u, P, k3)
        for i in range(n):
            tmp[i] = y[i] + h * k3[i]
        dynamics(model, tmp, u, P, k4)
        for i in range(n):
            y[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return y


_CS_STEP = 1e-30


@njit(cache=True)
def rk4_sens(model, x, u, dt, nsub, P):
    """RK4 step plus exact Jacobians via complex-step differentiation."""
    n = x.shape[0]
    m = u.shape[0]
    xn = rk4(model, x, u, dt, nsub, P)
    A = np.empty((n, n))
    B = np.empty((n, m))
    xc = x.astype(np.complex128)
    uc = u.astype(np.complex128)
    for j in range(n):
        xc[j] += 1j * _CS_STEP
        y = rk4(model, xc, uc, dt, nsub, P)
        for i in range(n):
            A[i, j] = y[i].imag / _CS_STEP
        xc[j] = x[j]
    for j in range(m):
        uc[j] += 1j * _CS_STEP
        y = rk4(model, xc, uc, dt, nsub, P)
        for i in range(n):
            B[i, j] = y[i].imag / _CS_STEP
        uc[j] = u[j]
    return xn, A, B


@njit(cache=True)
def renormalize_quat(x):
    nrm = np.sqrt(x[3] * x[3] + x[4] * x[4] + x[5] * x[5] + x[6] * x[6])
    s = 1.0 / nrm
    if x[3] < 0.0:
        s = -s
    for i in range(3, 7):
        x[i] *= s


@njit(cache=True)
def project_quat_sens(y, A, B):
    """Chain the Jacobians of ``y`` through quaternion renormalization."""
    nrm = np.sqrt(y[3] * y[3] + y[4] * y[4] + y[5] * y[5] + y[6] * y[6])
    s = 1.0 / nrm
    if y[3] < 0.0:
        s = -s
    qh = y[3:7] / nrm
    P = -np.outer(qh, qh)
    for i in range(4):
        P[i, i] += 1.0
    P *= s
    A[3:7, :] = P @ np.ascontiguousarray(A[3:7, :])
    B[3:7, :] = P @ np.ascontiguousarray(B[3:7, :])


@njit(cache=True)
def horizon_sens(model, X, U, dt, nsub, P):
    """Per-stage RK4 predictions and Jacobians along a shooting trajectory."""
    N = U.shape[0]
    n = X.shape[1]
    m = U.shape[1]
    Xn = np.empty((N, n))
    A = np.empty((N, n, n))
    B = np.empty((N, n, m))
    for k in range(N):
        xn, a, b = rk4_sens(model, X[k], U[k], dt, nsub, P)
        project_quat_sens(xn, a, b)
        renormalize_quat(xn)
        Xn[k] = xn
        A[k] = a
        B[k] = b
    return Xn, A, B


@njit(cache=True)
def rollout(model, x0, U, dt, nsub, P):
    N = U.shape[0]
    X = np.empty((N + 1, x0.shape[0]))
    X[0] = x0
    for k in range(N):
        y = rk4(model, X[k], U[k], dt, nsub, P)
        renormalize_quat(y)
        X[k + 1] = y
    return X
