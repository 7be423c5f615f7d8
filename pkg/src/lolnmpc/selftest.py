"""Numerical property suite run by ``lolnmpc selftest``.

Every check compares package code against an independent oracle and
returns a :class:`CheckResult`; :func:`run_selftest` runs them all.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from . import oracles
from .controllers import LolNmpc
from .integrator import rk4_step, rk4_step_with_sensitivities
from .model import QuadModel, actuator_constraint_matrices, mix, pid_torque
from .params import VehicleParams, default_params
from .plant import PlantConfig, run_closed_loop
from .qp import solve_dense_qp
from .trajectories import ReferenceTrajectory
from .bench import position_rmse

VARIANTS = ("none", "speed", "force", "lol")


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: str
    elapsed: float = 0.0
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name:<22} {self.value:.3e}  {self.limit}{extra}  {self.elapsed:.2f}s"


def _random_state(model: QuadModel, rng: np.random.Generator) -> NDArray[np.float64]:
    x = model.hover_state(position=rng.normal(size=3))
    q = rng.normal(size=4)
    x[3:7] = q / np.linalg.norm(q) * np.sign(q[0])
    x[7:10] = rng.normal(size=3)
    x[10:13] = rng.normal(size=3)
    if model.variant == "lol":
        x[13:16] = 0.1 * rng.normal(size=3)
        x[16:20] = rng.uniform(0.3, 0.7, 4)
    elif model.variant != "none":
        x[13:17] *= rng.uniform(0.8, 1.2, 4)
    return x


def _random_input(model: QuadModel, rng: np.random.Generator) -> NDArray[np.float64]:
    u = model.hover_input() * rng.uniform(0.8, 1.2, 4)
    if model.variant == "lol":
        u[1:] = rng.normal(size=3)
    return u


# -- individual checks -------------------------------------------------------


def check_rk4_order(params: VehicleParams) -> CheckResult:
    """Empirical convergence order from step halving on the LoL model."""
    model = QuadModel(params, "lol")
    x0 = model.hover_state()
    x0[10:13] = [0.8, -0.5, 0.3]
    u = np.array([params.hover_throttle * 1.05, 1.0, -0.6, 0.4])
    horizon = 0.2

    def solve(h):
        x = x0
        for _ in range(int(round(horizon / h))):
            x = rk4_step(model, x, u, h, renormalize=False)
        return x

    # steps well below the 30 ms motor constant so the error is asymptotic
    exact = solve(horizon / 4096)
    hs = [horizon / 32, horizon / 64, horizon / 128]
    errs = [np.linalg.norm(solve(h) - exact) for h in hs]
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    order = float(np.mean(orders))
    return CheckResult("rk4_order", 3.7 <= order <= 4.3, order, "in [3.7, 4.3]",
                       detail="orders " + ", ".join(f"{o:.3f}" for o in orders))


def _scaled_jacobian_error(model, x, u, dt, substeps) -> float:
    """Relative max-norm mismatch of compiled sensitivities against FD of the oracle.

    Columns are scaled by ``max(1, |x_j|)`` so states with large magnitudes
    (motor speeds in rad/s) are compared in relative units.
    """
    params = model.params
    _, A, B = rk4_step_with_sensitivities(model, x, u, dt, substeps)
    fx = lambda s: oracles.reference_rk4(s, u, params, dt, substeps, model.variant)  # noqa: E731
    fu = lambda s: oracles.reference_rk4(x, s, params, dt, substeps, model.variant)  # noqa: E731
    A_fd = oracles.central_difference_jacobian(fx, x)
    B_fd = oracles.central_difference_jacobian(fu, u)
    sx = np.maximum(1.0, np.abs(x))
    su = np.maximum(1.0, np.abs(u))
    J = np.hstack([A * sx, B * su])
    J_fd = np.hstack([A_fd * sx, B_fd * su])
    return float(np.max(np.abs(J - J_fd)) / np.max(np.abs(J_fd)))


def check_sensitivities(params: VehicleParams, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_variant = ""
    for variant in VARIANTS:
        model = QuadModel(params, variant)
        for _ in range(3):
            x = _random_state(model, rng)
            u = _random_input(model, rng)
            err = _scaled_jacobian_error(model, x, u, 0.02, 2)
            if err > worst:
                worst, worst_variant = err, variant
    return CheckResult("rk4_sensitivities", worst < 1e-5, worst, "< 1e-5",
                       detail=f"worst variant {worst_variant}")


def check_qp(n_instances: int = 50, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_instances):
        n = int(rng.integers(2, 5))
        qp = oracles.random_qp(rng, n, int(rng.integers(2, 6)), n_eq=int(k % 3 == 0),
                               n_soft=int(rng.integers(0, 3)))
        x = solve_dense_qp(qp).x
        x_ref = oracles.brute_force_qp(qp)
        worst = max(worst, float(np.max(np.abs(x - x_ref))))
    return CheckResult("qp_enumeration", worst < 1e-8, worst, "< 1e-8",
                       detail=f"{n_instances} instances")


def check_quaternion_drift(params: VehicleParams) -> CheckResult:
    """Norm change of the raw (unrenormalized) RK4 step on a tumbling vehicle."""
    model = QuadModel(params, "lol")
    x = model.hover_state()
    x[10:13] = [3.0, -2.0, 1.5]
    u = np.array([params.hover_throttle, 3.0, -2.0, 1.5])
    worst = 0.0
    for _ in range(200):
        y = rk4_step(model, x, u, 0.01, 2, renormalize=False)
        worst = max(worst, abs(np.linalg.norm(y[3:7]) - np.linalg.norm(x[3:7])))
        x = rk4_step(model, x, u, 0.01, 2)
    return CheckResult("quaternion_drift", worst < 1e-9, worst, "< 1e-9 per step")


def check_hover_trim(params: VehicleParams) -> CheckResult:
    worst = 0.0
    for variant in VARIANTS:
        model = QuadModel(params, variant)
        worst = max(worst, float(np.linalg.norm(model(model.hover_state(), model.hover_input()))))
    return CheckResult("hover_trim", worst < 1e-9, worst, "< 1e-9")


def check_mixer_map(params: VehicleParams, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    model = QuadModel(params, "lol")
    worst = 0.0
    for include_integral in (False, True):
        C, D = actuator_constraint_matrices(params, include_integral=include_integral)
        for _ in range(20):
            x = _random_state(model, rng)
            u = _random_input(model, rng)
            z = x[13:16] if include_integral else np.zeros(3)
            tau_c, _ = pid_torque(u[1:], x[10:13], z, params)
            worst = max(worst, float(np.max(np.abs(C @ x + D @ u - mix(u[0], tau_c)))))
    return CheckResult("mixer_affine_map", worst < 1e-12, worst, "< 1e-12")


def model_match_reference(params: VehicleParams, duration: float = 5.0,
                          lookahead: float = 1.5, dt: float = 0.01) -> ReferenceTrajectory:
    """A dynamically feasible reference made by flying the LoL model open loop."""
    model = QuadModel(params, "lol")
    hover = params.hover_throttle
    n = int(round((duration + lookahead) / dt))
    t = np.arange(n + 1) * dt

    def u_of(tk):
        s = np.sin
        return np.array([hover * (1 + 0.04 * s(1.2 * tk)), 0.6 * s(1.5 * tk), 0.5 * s(1.1 * tk),
                         0.3 * s(0.7 * tk)])

    X = np.empty((n + 1, model.nx))
    X[0] = model.hover_state(position=(0.0, 0.0, 3.0))
    sub = 10
    for k in range(n):
        x = X[k]
        for j in range(sub):
            x = model.step(x, u_of(t[k] + j * dt / sub), dt / sub)
        X[k + 1] = x
    a = np.array([model(X[k], u_of(t[k]))[7:10] for k in range(n + 1)])
    yaw = np.array([np.arctan2(2 * (q[0] * q[3] + q[1] * q[2]), 1 - 2 * (q[2] ** 2 + q[3] ** 2))
                    for q in X[:, 3:7]])
    return ReferenceTrajectory(t, X[:, 0:3].copy(), X[:, 7:10].copy(), a, yaw, X[:, 3:7].copy(),
                               X[:, 10:13].copy(), {"name": "model_match", "duration": duration})


def check_model_match(params: VehicleParams) -> CheckResult:
    ref = model_match_reference(params)
    cfg = PlantConfig(latency_ticks=0)
    log = run_closed_loop(LolNmpc(params=params), ref, plant_config=cfg, record_predictions=False)
    rmse = position_rmse(log, ref)
    return CheckResult("model_match_rmse", rmse < 0.02, rmse, "< 0.02 m")


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "rk4_order": check_rk4_order,
    "rk4_sensitivities": check_sensitivities,
    "qp_enumeration": lambda params: check_qp(),
    "quaternion_drift": check_quaternion_drift,
    "hover_trim": check_hover_trim,
    "mixer_affine_map": check_mixer_map,
    "model_match_rmse": check_model_match,
}


def run_selftest(params: VehicleParams | None = None, only: list[str] | None = None,
                 echo: Callable[[str], None] | None = None) -> list[CheckResult]:
    """Run the suite; a check that raises is reported as failed."""
    params = params or default_params()
    results = []
    for name, fn in CHECKS.items():
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            res = fn(params)
        except Exception as exc:  # a crashing check is a failing check
            res = CheckResult(name, False, float("nan"), "", detail=f"{type(exc).__name__}: {exc}")
        res.elapsed = time.perf_counter() - t0
        results.append(res)
        if echo:
            echo(res.line())
    return results
