"""Independent reference computations used by the self-test and the test suite.

Nothing here is on a hot path; these are deliberately naive.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import model as _m
from . import so3
from .params import VehicleParams
from .qp import DenseQp


def brute_force_qp(qp: DenseQp, tol: float = 1e-9) -> np.ndarray:
    """Solve a small QP by enumerating every active-set combination.

    Each hard row is inactive, at its lower bound or at its upper bound; each
    soft row is unpenalized or penalized toward one of its bounds. The
    combination whose KKT point is primal and dual feasible with the lowest
    objective wins.
    """
    H = np.asarray(qp.H, dtype=float)
    g = np.asarray(qp.g, dtype=float)
    n = g.size
    A_eq = qp.A_eq if qp.A_eq is not None else np.zeros((0, n))
    b_eq = qp.b_eq if qp.b_eq is not None else np.zeros(0)
    C = qp.C if qp.C is not None else np.zeros((0, n))
    lb = qp.lb if qp.lb is not None else np.full(C.shape[0], -np.inf)
    ub = qp.ub if qp.ub is not None else np.full(C.shape[0], np.inf)
    Cs = qp.C_soft if qp.C_soft is not None else np.zeros((0, n))
    ls = qp.lb_soft if qp.lb_soft is not None else np.full(Cs.shape[0], -np.inf)
    us = qp.ub_soft if qp.ub_soft is not None else np.full(Cs.shape[0], np.inf)
    ws = np.broadcast_to(np.asarray(qp.w_soft if qp.w_soft is not None else 0.0, float),
                         (Cs.shape[0],))

    def objective(x):
        a = Cs @ x
        pen = np.maximum(a - us, 0.0) ** 2 + np.maximum(ls - a, 0.0) ** 2
        return 0.5 * x @ H @ x + g @ x + 0.5 * np.sum(ws * pen)

    best = None
    best_val = np.inf
    hard_choices = [[0] + ([1] if np.isfinite(lb[i]) else []) + ([2] if np.isfinite(ub[i]) else [])
                    for i in range(C.shape[0])]
    soft_choices = [[0] + ([1] if np.isfinite(ls[i]) else []) + ([2] if np.isfinite(us[i]) else [])
                    for i in range(Cs.shape[0])]
    for hard in itertools.product(*hard_choices):
        for soft in itertools.product(*soft_choices):
            Hk = H.copy()
            gk = g.copy()
            for i, s in enumerate(soft):
                if s:
                    target = ls[i] if s == 1 else us[i]
                    Hk += ws[i] * np.outer(Cs[i], Cs[i])
                    gk -= ws[i] * target * Cs[i]
            rows = [A_eq]
            rhs = [b_eq]
            act = [i for i, s in enumerate(hard) if s]
            if act:
                rows.append(C[act])
                rhs.append(np.array([lb[i] if hard[i] == 1 else ub[i] for i in act]))
            A = np.vstack(rows)
            b = np.concatenate(rhs)
            m = A.shape[0]
            K = np.block([[Hk, A.T], [A, np.zeros((m, m))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-gk, b]))
            except np.linalg.LinAlgError:
                continue
            if not np.allclose(K @ sol, np.concatenate([-gk, b]), atol=1e-9):
                continue
            x = sol[:n]
            # Lagrangian H x + g = A' lam ; solve returned -lam
            lam = -sol[n:]
            lam_in = lam[A_eq.shape[0]:]
            ok = True
            for j, i in enumerate(act):
                if hard[i] == 1 and lam_in[j] < -tol:
                    ok = False
                if hard[i] == 2 and lam_in[j] > tol:
                    ok = False
            cx = C @ x
            if np.any(cx < lb - tol) or np.any(cx > ub + tol):
                ok = False
            a = Cs @ x
            for i, s in enumerate(soft):
                if s == 0 and (a[i] < ls[i] - tol or a[i] > us[i] + tol):
                    ok = False
                if s == 1 and a[i] > ls[i] + tol:
                    ok = False
                if s == 2 and a[i] < us[i] - tol:
                    ok = False
            if not ok:
                continue
            val = objective(x)
            if val < best_val - 1e-12:
                best_val = val
                best = x
    if best is None:
        raise ValueError("no feasible active set found")
    return best


def random_qp(rng: np.random.Generator, n: int, m: int, n_eq: int = 0, n_soft: int = 0) -> DenseQp:
    """Random strictly convex QP with a guaranteed-feasible box of rows."""
    M = rng.standard_normal((n, n))
    H = M @ M.T + 0.5 * np.eye(n)
    g = rng.standard_normal(n) * 3.0
    x_feas = rng.standard_normal(n) * 0.3
    C = rng.standard_normal((m, n))
    cx = C @ x_feas
    lb = cx - rng.uniform(0.05, 1.0, m)
    ub = cx + rng.uniform(0.05, 1.0, m)
    # a few one-sided rows
    one_sided = rng.random(m) < 0.3
    lb = np.where(one_sided & (rng.random(m) < 0.5), -np.inf, lb)
    ub = np.where(one_sided & np.isfinite(lb), ub, ub)
    A_eq = b_eq = None
    if n_eq:
        A_eq = rng.standard_normal((n_eq, n))
        b_eq = A_eq @ x_feas
    C_soft = lb_soft = ub_soft = w = None
    if n_soft:
        C_soft = rng.standard_normal((n_soft, n))
        a = C_soft @ x_feas
        lb_soft = a - rng.uniform(0.0, 0.5, n_soft)
        ub_soft = a + rng.uniform(0.0, 0.5, n_soft)
        w = rng.uniform(1.0, 10.0, n_soft)
    return DenseQp(H, g, A_eq, b_eq, C, lb, ub, C_soft, lb_soft, ub_soft, w)


def central_difference_jacobian(fun, x, h=1e-6):
    """Central finite-difference Jacobian with step scaled by ``max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        J[:, i] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * step)
    return J


def reference_dynamics(x, u, params: VehicleParams, variant: str = "lol") -> np.ndarray:
    """Plain numpy state derivative, assembled from the model-level helpers.

    Shares no code with the compiled kernels, so the two can check each other.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    q, v, w = x[3:7], x[7:10], x[10:13]
    out = np.zeros_like(x)
    if variant == "none":
        f = u
    elif variant == "speed":
        f = params.thrust_coeff * x[13:17] ** 2
        out[13:17] = (u - x[13:17]) / params.k_mot
    elif variant == "force":
        f = x[13:17]
        out[13:17] = (u - x[13:17]) / params.k_mot_f
    elif variant == "lol":
        f = _m.mixer_to_frame(_m.thrust_from_rpm(x[16:20], params))
        tau_c, zdot = _m.pid_torque(u[1:], w, x[13:16], params)
        out[13:16] = zdot
        out[16:20] = (_m.mix(u[0], tau_c) - x[16:20]) / params.k_mot
    else:
        raise ValueError(f"unknown variant {variant!r}")
    R = so3.rotation_matrix(q)
    T, tau = _m.allocate(f, params)
    J = np.asarray(params.inertia)
    out[0:3] = v
    out[3:7] = so3.quat_derivative(q, w)
    force_b = _m.drag_force(R.T @ v, params) + np.array([0.0, 0.0, T])
    out[7:10] = R @ force_b / params.mass - np.array([0.0, 0.0, params.gravity])
    out[10:13] = (tau - np.cross(w, J * w)) / J
    return out


def reference_rk4(x, u, params: VehicleParams, dt: float, substeps: int = 1,
                  variant: str = "lol") -> np.ndarray:
    """RK4 of :func:`reference_dynamics` without quaternion renormalization."""
    h = dt / substeps
    y = np.asarray(x, dtype=float)
    f = lambda s: reference_dynamics(s, u, params, variant)  # noqa: E731
    for _ in range(substeps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y
