"""Multiple-shooting optimal control problem and its Gauss-Newton SQP solver.

The transcription keeps every horizon state as a shooting node linked by
RK4 steps. Each SQP iteration linearizes the nodes, condenses the QP onto the
input increments and solves it with the dense dual active-set solver.
Attitude enters the cost through the three-parameter quaternion error; the
shooting states keep full quaternions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from numpy.typing import NDArray

from . import so3
from .exceptions import NonFiniteState
from .model import INTEGRAL, MOTOR, QUAT, RATE, RPM, QuadModel, actuator_constraint_matrices
from .qp import STATUS_NAMES, DenseQp, solve_dense_qp


class SolveMode(str, Enum):
    RTI = "rti"
    FULL_SQP = "full_sqp"


@dataclass(frozen=True)
class OcpConfig:
    N: int = 20
    dt: float = 0.05
    substeps: int = 2
    # diagonal weights: position, attitude error, velocity, body rate,
    # rate-loop integral, motor state (normalized), input (normalized)
    q_pos: float = 100.0
    q_att: float = 50.0
    q_vel: float = 10.0
    q_rate: float = 1.0
    q_int: float = 0.0
    q_motor: float = 0.1
    r_input: float = 1.0
    terminal_factor: float = 2.0
    body_rate_bound: float | None = None  # soft, None -> vehicle body_rate_max
    slack_weight: float = 1000.0
    mixer_rows: bool = True
    mixer_rows_include_integral: bool = True
    max_sqp_iters: int = 50
    kkt_tol: float = 1e-8
    qp_max_iter: int = 2000

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        weights = (self.q_pos, self.q_att, self.q_vel, self.q_rate, self.q_int, self.q_motor,
                   self.r_input, self.terminal_factor, self.slack_weight)
        if min(weights) < 0:
            raise ValueError("weights must be non-negative")

    def replace(self, **changes) -> "OcpConfig":
        return replace(self, **changes)


@dataclass
class OcpProblem:
    """One horizon instance: ``x_ref`` has N+1 rows, ``u_ref`` N rows."""

    model: QuadModel
    config: OcpConfig
    x0: NDArray[np.float64]
    x_ref: NDArray[np.float64]
    u_ref: NDArray[np.float64]
    u0: NDArray[np.float64] | None = None

    def __post_init__(self):
        N = self.config.N
        nx, nu = self.model.nx, self.model.nu
        self.x0 = np.asarray(self.x0, dtype=float)
        self.x_ref = np.asarray(self.x_ref, dtype=float)
        self.u_ref = np.asarray(self.u_ref, dtype=float)
        if self.x0.shape != (nx,):
            raise ValueError(f"x0 must have shape ({nx},), got {self.x0.shape}")
        if self.x_ref.shape != (N + 1, nx):
            raise ValueError(f"x_ref must have shape ({N + 1}, {nx}), got {self.x_ref.shape}")
        if self.u_ref.shape != (N, nu):
            raise ValueError(f"u_ref must have shape ({N}, {nu}), got {self.u_ref.shape}")
        if not np.all(np.isfinite(self.x0)):
            raise NonFiniteState("initial state is not finite")


@dataclass
class OcpSolution:
    states: NDArray[np.float64]
    inputs: NDArray[np.float64]
    kkt_residual: float
    cost: float
    iterations: int
    solve_time: float
    qp_status: str
    degraded: bool = False
    dynamics_residual: float = 0.0
    max_slack: float = 0.0
    cost_history: list = field(default_factory=list)

    def log_row(self) -> dict:
        return {
            "iterations": self.iterations,
            "kkt": self.kkt_residual,
            "cost": self.cost,
            "solve_time_us": self.solve_time * 1e6,
            "qp_status": self.qp_status,
            "degraded": self.degraded,
            "max_slack": self.max_slack,
        }


@dataclass
class QpSubproblem:
    """Stage-wise linearization of the OCP around a guess.

    Dynamics:  dx[k+1] = A[k] dx[k] + B[k] du[k] + d[k],  dx[0] = dx0.
    Cost:      0.5 sum_k |Mx[k] dx[k] + rx[k]|^2 + 0.5 sum_k |Mu[k] du[k] + ru[k]|^2.
    Hard:      du_lo <= du <= du_hi;  row_lo <= Cx[k] dx[k] + Du[k] du[k] <= row_hi.
    Soft:      Sx[k] dx[k] in [soft_lo, soft_hi] for k = 1..N, weight soft_w.
    ``u_scale`` maps the solver's normalized variables to input units.
    """

    A: NDArray
    B: NDArray
    d: NDArray
    dx0: NDArray
    Mx: NDArray
    rx: NDArray
    Mu: NDArray
    ru: NDArray
    du_lo: NDArray
    du_hi: NDArray
    Cx: NDArray | None = None
    Du: NDArray | None = None
    row_lo: NDArray | None = None
    row_hi: NDArray | None = None
    Sx: NDArray | None = None
    soft_lo: NDArray | None = None
    soft_hi: NDArray | None = None
    soft_w: float = 0.0
    u_scale: NDArray | None = None

    @property
    def N(self) -> int:
        return self.B.shape[0]


@dataclass
class QpStep:
    dx: NDArray
    du: NDArray
    slacks: NDArray
    status: str
    kkt: float
    stationarity: float
    iterations: int
    hessian: NDArray | None = None


def _condense(sub: QpSubproblem):
    """Express every dx[k] = G[k] z + c[k] in the scaled input increments z."""
    N, nx, nu = sub.B.shape
    scale = np.ones(nu) if sub.u_scale is None else sub.u_scale
    nz = N * nu
    G = np.zeros((N + 1, nx, nz))
    c = np.zeros((N + 1, nx))
    c[0] = sub.dx0
    for k in range(N):
        cols = k * nu
        if cols:
            G[k + 1, :, :cols] = sub.A[k] @ G[k, :, :cols]
        G[k + 1, :, cols : cols + nu] = sub.B[k] * scale
        c[k + 1] = sub.A[k] @ c[k] + sub.d[k]
    return G, c, scale


def _dense_qp(sub: QpSubproblem):
    G, c, scale = _condense(sub)
    N, nx, nu = sub.B.shape
    nz = N * nu
    # stacked least-squares rows for states and inputs
    Ms = sub.Mx @ G  # (N+1, ny, nz)
    rs = (sub.Mx @ c[:, :, None])[:, :, 0] + sub.rx
    ny = sub.Mx.shape[1]
    Mrows = Ms.reshape((N + 1) * ny, nz)
    rrows = rs.reshape(-1)
    H = Mrows.T @ Mrows
    g = Mrows.T @ rrows
    for k in range(N):
        blk = slice(k * nu, (k + 1) * nu)
        Mu = sub.Mu[k] * scale
        H[blk, blk] += Mu.T @ Mu
        g[blk] += Mu.T @ sub.ru[k]

    rows, lo, hi = [np.eye(nz)], [(sub.du_lo / scale).reshape(-1)], [(sub.du_hi / scale).reshape(-1)]
    if sub.Cx is not None:
        nc = sub.Cx.shape[1]
        R = sub.Cx @ G[:N]
        off = (sub.Cx @ c[:N, :, None])[:, :, 0]
        for k in range(N):
            R[k, :, k * nu : (k + 1) * nu] += sub.Du[k] * scale
        rows.append(R.reshape(N * nc, nz))
        lo.append((sub.row_lo - off).reshape(-1))
        hi.append((sub.row_hi - off).reshape(-1))
    qp = DenseQp(H, g, C=np.vstack(rows), lb=np.concatenate(lo), ub=np.concatenate(hi))
    if sub.Sx is not None:
        S = sub.Sx @ G[1:]
        off = (sub.Sx @ c[1:, :, None])[:, :, 0]
        qp.C_soft = S.reshape(-1, nz)
        qp.lb_soft = (sub.soft_lo - off).reshape(-1)
        qp.ub_soft = (sub.soft_hi - off).reshape(-1)
        qp.w_soft = sub.soft_w
    return qp, G, c, scale


def solve_qp(sub: QpSubproblem, max_iter: int = 2000) -> QpStep:
    """Condense and solve a :class:`QpSubproblem`.

    Returns the state and input increments, soft-row slacks and the QP status.
    """
    qp, G, c, scale = _dense_qp(sub)
    res = solve_dense_qp(qp, max_iter=max_iter)
    N, nx, nu = sub.B.shape
    z = res.x
    du = (z.reshape(N, nu)) * scale
    dx = G @ z + c
    stationarity = float(np.max(np.abs(qp.H @ z))) if z.size else 0.0
    return QpStep(dx, du, res.slack, STATUS_NAMES[res.status], res.kkt, stationarity,
                  res.iterations, qp.H)


def _quat_error_and_jacobian(q_ref: NDArray, q: NDArray):
    """Vectorized attitude error 2 vec(q_ref^-1 ⊗ q) and its Jacobian w.r.t. q."""
    w, x, y, z = q_ref[:, 0], -q_ref[:, 1], -q_ref[:, 2], -q_ref[:, 3]
    # rows 1..3 of the left-multiplication matrix of conj(q_ref)
    Lm = np.stack([
        np.stack([w, -x, -y, -z], -1),
        np.stack([x, w, -z, y], -1),
        np.stack([y, z, w, -x], -1),
        np.stack([z, -y, x, w], -1),
    ], axis=1)
    prod = (Lm @ q[:, :, None])[:, :, 0]
    s = np.where(prod[:, 0] < 0, -1.0, 1.0)
    err = 2.0 * s[:, None] * prod[:, 1:]
    jac = 2.0 * s[:, None, None] * Lm[:, 1:, :]
    return err, jac


class _Layout:
    """Residual structure of a model's state cost."""

    def __init__(self, model: QuadModel, cfg: OcpConfig):
        self.model = model
        nx = model.nx
        blocks = [(slice(0, 3), cfg.q_pos), (QUAT, cfg.q_att), (slice(7, 10), cfg.q_vel),
                  (RATE, cfg.q_rate)]
        if model.variant == "lol":
            blocks += [(INTEGRAL, cfg.q_int), (RPM, cfg.q_motor)]
        elif model.variant in ("speed", "force"):
            blocks += [(MOTOR, cfg.q_motor)]
        self.blocks = blocks
        self.ny = sum(3 if sl == QUAT else sl.stop - sl.start for sl, _ in blocks)
        # static part of the residual Jacobian (everything except attitude)
        sqrt_w = []
        J = np.zeros((self.ny, nx))
        row = 0
        self.att_rows = None
        for sl, wgt in blocks:
            size = 3 if sl == QUAT else sl.stop - sl.start
            if sl == QUAT:
                self.att_rows = slice(row, row + 3)
            else:
                scale = model.motor_scale if sl in (MOTOR, RPM) else 1.0
                J[row : row + size, sl] = np.eye(size) / scale
            sqrt_w += [np.sqrt(wgt)] * size
            row += size
        self.J_static = J
        self.sqrt_w = np.array(sqrt_w)
        self.nonquat = np.ones(nx, dtype=bool)
        self.nonquat[QUAT] = False

    def residuals(self, X: NDArray, Xref: NDArray):
        """Unweighted residuals (K, ny) and Jacobians (K, ny, nx)."""
        K = X.shape[0]
        r = (X - Xref) @ self.J_static.T
        J = np.broadcast_to(self.J_static, (K,) + self.J_static.shape).copy()
        err, jac = _quat_error_and_jacobian(Xref[:, QUAT], X[:, QUAT])
        r[:, self.att_rows] = err
        J[:, self.att_rows, QUAT] = jac
        return r, J


class OcpSolver:
    """Reusable solver for one model/config pair.

    Not thread-safe: the workspace is rebuilt per call but cached matrices
    (constraint maps, weights) are shared across calls.
    """

    def __init__(self, model: QuadModel, config: OcpConfig | None = None):
        self.model = model
        self.config = config or OcpConfig()
        cfg = self.config
        self.layout = _Layout(model, cfg)
        self.u_lo, self.u_hi = model.input_bounds()
        self.rate_bound = (model.params.body_rate_max if cfg.body_rate_bound is None
                           else cfg.body_rate_bound)
        if model.is_lol and cfg.mixer_rows:
            self.C_mix, self.D_mix = actuator_constraint_matrices(
                model.params, include_integral=cfg.mixer_rows_include_integral)
        else:
            self.C_mix = self.D_mix = None
        self.r_sqrt_w = np.full(model.nu, np.sqrt(cfg.r_input))

    # -- building blocks -------------------------------------------------

    def initial_guess(self, problem: OcpProblem):
        """Reference inputs rolled out from x0."""
        U = np.clip(problem.u_ref, self.u_lo, self.u_hi)
        X = self.model.rollout(problem.x0, U, self.config.dt, self.config.substeps)
        return X, U

    def cost(self, problem: OcpProblem, X: NDArray, U: NDArray) -> float:
        cfg = self.config
        r, _ = self.layout.residuals(X[1:], problem.x_ref[1:])
        wr = r * self.layout.sqrt_w
        stage = 0.5 * np.sum(wr[:-1] ** 2) + 0.5 * cfg.terminal_factor * np.sum(wr[-1] ** 2)
        du = (U - problem.u_ref) / self.model.input_scale
        inputs = 0.5 * cfg.r_input * np.sum(du**2)
        w = X[1:, RATE]
        viol = np.maximum(np.abs(w) - self.rate_bound, 0.0)
        return float(stage + inputs + 0.5 * cfg.slack_weight * np.sum(viol**2))

    def hard_violation(self, X: NDArray, U: NDArray) -> float:
        v = max(float(np.max(self.u_lo - U)), float(np.max(U - self.u_hi)), 0.0)
        if self.C_mix is not None:
            rc = self.mixer_outputs(X[:-1], U)
            prm = self.model.params
            v = max(v, float(np.max(prm.r_min - rc)), float(np.max(rc - prm.r_max)))
        return v

    def mixer_outputs(self, X: NDArray, U: NDArray) -> NDArray:
        return X @ self.C_mix.T + U @ self.D_mix.T

    def linearize(self, problem: OcpProblem, X: NDArray, U: NDArray) -> tuple[QpSubproblem, NDArray]:
        """Linearize around ``(X, U)``; ``X[0]`` must already equal ``problem.x0``."""
        cfg = self.config
        model = self.model
        N = cfg.N
        Xn, A, B = model.horizon_sens(X, U, cfg.dt, cfg.substeps)
        if not (np.all(np.isfinite(Xn)) and np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise NonFiniteState("non-finite shooting predictions")
        d = Xn - X[1:]
        r, J = self.layout.residuals(X, problem.x_ref)
        sw = self.layout.sqrt_w
        weights = np.ones(N + 1)
        weights[0] = 0.0
        weights[N] = np.sqrt(cfg.terminal_factor)
        Mx = J * (sw[None, :, None] * weights[:, None, None])
        rx = r * sw[None, :] * weights[:, None]
        inv_scale = 1.0 / model.input_scale
        Mu = np.broadcast_to(np.diag(self.r_sqrt_w * inv_scale), (N, model.nu, model.nu))
        ru = (U - problem.u_ref) * inv_scale * self.r_sqrt_w
        sub = QpSubproblem(
            A=A, B=B, d=d, dx0=problem.x0 - X[0], Mx=Mx, rx=rx, Mu=Mu, ru=ru,
            du_lo=self.u_lo - U, du_hi=self.u_hi - U, u_scale=model.input_scale,
        )
        if self.C_mix is not None:
            prm = model.params
            rc = self.mixer_outputs(X[:-1], U)
            sub.Cx = np.broadcast_to(self.C_mix, (N,) + self.C_mix.shape)
            sub.Du = np.broadcast_to(self.D_mix, (N,) + self.D_mix.shape)
            sub.row_lo = prm.r_min - rc
            sub.row_hi = prm.r_max - rc
        Sx = np.zeros((3, model.nx))
        Sx[:, RATE] = np.eye(3)
        sub.Sx = np.broadcast_to(Sx, (N, 3, model.nx))
        sub.soft_lo = -self.rate_bound - X[1:, RATE]
        sub.soft_hi = self.rate_bound - X[1:, RATE]
        sub.soft_w = cfg.slack_weight
        return sub, d

    # -- solve -------------------------------------------------------------

    def solve(self, problem: OcpProblem, mode: SolveMode | str = SolveMode.RTI,
              warm_start: tuple[NDArray, NDArray] | None = None) -> OcpSolution:
        mode = SolveMode(mode)
        t0 = time.perf_counter()
        if warm_start is None:
            X, U = self.initial_guess(problem)
        else:
            X = np.array(warm_start[0], dtype=float)
            U = np.array(warm_start[1], dtype=float)
        X[0] = problem.x0
        if mode is SolveMode.RTI:
            sol = self._rti(problem, X, U)
        else:
            sol = self._full_sqp(problem, X, U)
        sol.solve_time = time.perf_counter() - t0
        return sol

    def _rti(self, problem, X, U) -> OcpSolution:
        try:
            sub, d = self.linearize(problem, X, U)
            step = solve_qp(sub, self.config.qp_max_iter)
        except (NonFiniteState, np.linalg.LinAlgError, FloatingPointError):
            return OcpSolution(X, U, np.inf, np.inf, 1, 0.0, "error", degraded=True)
        dyn = float(np.max(np.abs(d))) if d.size else 0.0
        if step.status != "optimal" or not np.all(np.isfinite(step.du)):
            return OcpSolution(X, U, np.inf, self.cost(problem, X, U), 1, 0.0, step.status,
                               degraded=True, dynamics_residual=dyn)
        Xn = X + step.dx
        Un = U + step.du
        _renormalize_rows(Xn)
        kkt = max(dyn, step.stationarity)
        slack = float(np.max(step.slacks)) if step.slacks.size else 0.0
        return OcpSolution(Xn, Un, kkt, self.cost(problem, Xn, Un), 1, 0.0, step.status,
                           dynamics_residual=dyn, max_slack=slack)

    def _full_sqp(self, problem, X, U) -> OcpSolution:
        cfg = self.config
        model = self.model
        X = model.rollout(problem.x0, U, cfg.dt, cfg.substeps)
        cost = self.cost(problem, X, U)
        viol = self.hard_violation(X, U)
        history = [cost]
        status = "optimal"
        kkt = np.inf
        slack = 0.0
        it = 0
        for it in range(1, cfg.max_sqp_iters + 1):
            sub, d = self.linearize(problem, X, U)
            step = solve_qp(sub, cfg.qp_max_iter)
            status = step.status
            if status != "optimal":
                break
            kkt = max(float(np.max(np.abs(d))), step.stationarity)
            slack = float(np.max(step.slacks)) if step.slacks.size else 0.0
            if kkt < cfg.kkt_tol:
                break
            # backtracking on the rolled-out trajectory
            alpha = 1.0
            accepted = False
            while alpha > 1e-6:
                Ut = U + alpha * step.du
                Xt = model.rollout(problem.x0, Ut, cfg.dt, cfg.substeps)
                ct = self.cost(problem, Xt, Ut)
                vt = self.hard_violation(Xt, Ut)
                if ct < cost and vt <= max(viol, 1e-7):
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                # no further decrease along the GN direction: stationary to working precision
                kkt = min(kkt, step.stationarity)
                break
            X, U, cost, viol = Xt, Ut, ct, vt
            history.append(cost)
        degraded = status != "optimal"
        dyn = 0.0
        sol = OcpSolution(X, U, kkt, cost, it, 0.0, status, degraded=degraded,
                          dynamics_residual=dyn, max_slack=slack, cost_history=history)
        return sol


def _renormalize_rows(X: NDArray) -> None:
    q = X[:, QUAT]
    n = np.linalg.norm(q, axis=1)
    s = np.where(q[:, 0] < 0, -1.0, 1.0) / n
    X[:, QUAT] = q * s[:, None]


def shift_warm_start(states: NDArray, inputs: NDArray, steps: int = 1):
    """Drop the first ``steps`` stages and duplicate the tail."""
    X = np.asarray(states)
    U = np.asarray(inputs)
    if steps <= 0:
        return X.copy(), U.copy()
    Xs = np.concatenate([X[steps:], np.repeat(X[-1:], min(steps, len(X)), axis=0)])[: len(X)]
    Us = np.concatenate([U[steps:], np.repeat(U[-1:], min(steps, len(U)), axis=0)])[: len(U)]
    return Xs, Us


def quaternion_error(q_ref, q) -> NDArray[np.float64]:
    return so3.quaternion_error(q_ref, q)
