"""NMPC controllers emitting the cascaded-interface command each control tick.

Both controllers follow the scikit-learn estimator layout: hyper-parameters
are plain constructor arguments (``get_params``/``set_params`` work), ``fit``
binds a reference trajectory and builds the solver, and ``predict`` maps a
sequence of state estimates to commands. Closed-loop use goes through
:meth:`NmpcController.command`, one call per tick.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import InvalidParam, NonFiniteState, VariantMismatch
from .model import FRAME_TO_MIXER, MIXER_TO_FRAME, MOTOR, RPM, QuadModel, actuator_constraint_matrices
from .ocp import OcpConfig, OcpProblem, OcpSolution, OcpSolver, SolveMode, shift_warm_start
from .params import VehicleParams, default_params
from .trajectories import ReferenceTrajectory

TELEMETRY_DIM = 20


@dataclass(frozen=True)
class ControlCommand:
    """Cascaded-interface setpoint: a thrust channel plus body-rate setpoints."""

    thrust: float
    omega_c: NDArray[np.float64]
    stale: bool = False

    def to_array(self) -> NDArray[np.float64]:
        return np.concatenate([[self.thrust], self.omega_c])

    def throttle(self, params: VehicleParams) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class StandardCmd(ControlCommand):
    """``thrust`` is the collective thrust setpoint T_c in newtons."""

    def throttle(self, params: VehicleParams) -> float:
        # equal split of T_c inverted through f = f_max r^2
        return float(np.sqrt(max(self.thrust, 0.0) / (4.0 * params.f_max)))


@dataclass(frozen=True)
class LolCmd(ControlCommand):
    """``thrust`` is the collective throttle t_c."""

    def throttle(self, params: VehicleParams) -> float:
        return float(self.thrust)


@dataclass
class PredictionRecord:
    """Horizon prediction at one tick; ``forces[k]`` is at lead ``(k + 1) * dt``."""

    t: float
    dt: float
    states: NDArray[np.float64]
    forces: NDArray[np.float64]

    @property
    def positions(self) -> NDArray[np.float64]:
        return self.states[:, :3]

    @property
    def horizon(self) -> int:
        return self.forces.shape[0]


def record_prediction(solution: OcpSolution, model: QuadModel, t: float, dt: float) -> PredictionRecord:
    """Snapshot of predicted states and per-motor forces (mixer order)."""
    X = solution.states
    if model.variant == "none":
        # force inputs act over each interval; attribute them to its end
        forces = model.input_forces(solution.inputs)[..., FRAME_TO_MIXER]
    else:
        forces = model.motor_forces(X[1:])
    return PredictionRecord(float(t), float(dt), X.copy(), np.asarray(forces, dtype=float).copy())


def estimate_from_telemetry(telemetry: ArrayLike, model: QuadModel) -> NDArray[np.float64]:
    """Map the 20-element flight-stack telemetry to a model's state layout.

    Telemetry is ``(p, q, v, w, z, r)`` with ``r`` in mixer order, as reported
    by the rate loop and RPM feedback.
    """
    y = np.asarray(telemetry, dtype=float)
    if y.shape != (TELEMETRY_DIM,):
        raise VariantMismatch(f"telemetry must have shape (20,), got {y.shape}")
    prm = model.params
    if model.variant == "lol":
        return y.copy()
    x = np.empty(model.nx)
    x[:13] = y[:13]
    r_frame = y[RPM][MIXER_TO_FRAME]
    if model.variant == "speed":
        x[MOTOR] = r_frame * prm.omega_motor_max
    elif model.variant == "force":
        x[MOTOR] = prm.f_max * r_frame**2
    return x


class NmpcController(BaseEstimator):
    """Shared RTI machinery; use :class:`StandardNmpc` or :class:`LolNmpc`."""

    variant: str = "lol"

    def _model_variant(self) -> str:
        raise NotImplementedError

    # -- estimator API -------------------------------------------------

    def fit(self, reference: ReferenceTrajectory, y=None):
        """Bind ``reference`` and build the model and solver."""
        if not isinstance(reference, ReferenceTrajectory):
            raise TypeError("fit expects a ReferenceTrajectory")
        if not self.rate_hz > 0:
            raise InvalidParam(f"rate_hz must be positive, got {self.rate_hz}")
        params = self.params if self.params is not None else default_params()
        cfg = self.ocp_config if self.ocp_config is not None else OcpConfig()
        self.params_ = params
        self.config_ = cfg
        self.model_ = QuadModel(params, self._model_variant())
        self.solver_ = OcpSolver(self.model_, cfg)
        self.reference_ = reference
        self._warm_up()
        self.reset()
        return self

    def _warm_up(self) -> None:
        # first call loads the compiled kernels; keep that out of the control loop
        xr, ur = self.reference_window(0.0)
        self.solver_.solve(OcpProblem(self.model_, self.config_, xr[0], xr, ur), SolveMode.RTI)

    def predict(self, estimates: ArrayLike, times: ArrayLike | None = None) -> NDArray[np.float64]:
        """Commands ``(n, 4)`` for successive telemetry rows (stateful, in order)."""
        check_is_fitted(self, "solver_")
        est = np.atleast_2d(np.asarray(estimates, dtype=float))
        if times is None:
            times = np.arange(est.shape[0]) / self.rate_hz
        return np.array([self.command(t, e).to_array() for t, e in zip(times, est)])

    # -- closed-loop API -------------------------------------------------

    def reset(self) -> None:
        self._warm = None
        self._last_cmd = None
        self._motor_est = None
        self._last_u = None
        self._last_x = None
        self.last_solution_ = None
        self.last_state_ = None
        self.last_prediction_ = None

    def reference_window(self, t: float):
        """Reference states ``(N+1, nx)`` and inputs ``(N, nu)`` from time ``t``."""
        cfg = self.config_
        model = self.model_
        times = t + cfg.dt * np.arange(cfg.N + 1)
        xr = np.zeros((cfg.N + 1, model.nx))
        xr[:, :13] = self.reference_.states(times)
        thrust = self.reference_.collective_thrust(self.params_, times)
        motors = model.motor_reference(thrust)
        if model.variant == "lol":
            xr[:, RPM] = motors
        elif model.variant in ("speed", "force"):
            xr[:, MOTOR] = motors
        if model.variant == "lol":
            ur = np.column_stack([motors[:-1, 0], xr[1:, 10:13]])
        else:
            ur = motors[:-1].copy()
        lo, hi = model.input_bounds()
        return xr, np.clip(ur, lo, hi)

    def state_estimate(self, telemetry: ArrayLike) -> NDArray[np.float64]:
        x = estimate_from_telemetry(telemetry, self.model_)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState("state estimate is not finite")
        if not self.rpm_feedback:
            motor = RPM if self.model_.variant == "lol" else MOTOR
            if self.model_.variant != "none":
                if self._motor_est is None:
                    self._motor_est = x[motor].copy()
                x[motor] = self._motor_est
        return x

    def command(self, t: float, telemetry: ArrayLike) -> ControlCommand:
        """Solve one RTI step from the telemetry at time ``t``."""
        check_is_fitted(self, "solver_")
        x0 = self.state_estimate(telemetry)
        xr, ur = self.reference_window(t)
        problem = OcpProblem(self.model_, self.config_, x0, xr, ur, u0=self._last_u)
        sol = self.solver_.solve(problem, SolveMode.RTI, warm_start=self._warm)
        self.last_solution_ = sol
        self.last_state_ = x0
        if sol.degraded:
            self._warm = None
            cmd = self._fallback(x0)
        else:
            self._warm = shift_warm_start(sol.states, sol.inputs, 1)
            cmd = self._extract(sol)
            self._last_u = sol.inputs[0].copy()
            self.last_prediction_ = record_prediction(sol, self.model_, t, self.config_.dt)
        self._last_cmd = cmd
        self._propagate_motor_estimate(x0)
        return cmd

    def _fallback(self, x0) -> ControlCommand:
        if self._last_cmd is not None:
            c = self._last_cmd
            return type(c)(c.thrust, c.omega_c.copy(), stale=True)
        u = self.model_.hover_input()
        return self._extract_inputs(u, x0, stale=True)

    def _propagate_motor_estimate(self, x0) -> None:
        if self.rpm_feedback or self.model_.variant == "none" or self._last_u is None:
            return
        motor = RPM if self.model_.variant == "lol" else MOTOR
        nxt = self.model_.step(x0, self._last_u, 1.0 / self.rate_hz, 1)
        self._motor_est = nxt[motor].copy()

    def mixer_output(self) -> NDArray[np.float64] | None:
        """Modelled mixer output at the last tick (LoL only)."""
        return None

    def _extract(self, sol: OcpSolution) -> ControlCommand:
        raise NotImplementedError

    def _extract_inputs(self, u, x0, stale=False) -> ControlCommand:
        raise NotImplementedError


class StandardNmpc(NmpcController):
    """NMPC on a rigid-body model with direct motor inputs.

    The rate setpoint is the body rate of the first predicted state and the
    thrust setpoint the sum of the first-stage commanded motor forces.
    """

    def __init__(self, motor_variant: str = "speed", params: VehicleParams | None = None,
                 ocp_config: OcpConfig | None = None, rate_hz: float = 100.0,
                 rpm_feedback: bool = True):
        self.motor_variant = motor_variant
        self.params = params
        self.ocp_config = ocp_config
        self.rate_hz = rate_hz
        self.rpm_feedback = rpm_feedback

    def _model_variant(self) -> str:
        if self.motor_variant not in ("none", "speed", "force"):
            raise VariantMismatch(f"unknown motor variant {self.motor_variant!r}")
        return self.motor_variant

    def _extract(self, sol: OcpSolution) -> ControlCommand:
        return standard_command_from(sol.states, sol.inputs, self.model_)

    def _extract_inputs(self, u, x0, stale=False) -> ControlCommand:
        T = float(np.sum(self.model_.input_forces(u)))
        return StandardCmd(T, np.zeros(3), stale=stale)


def standard_command_from(states: NDArray, inputs: NDArray, model: QuadModel) -> StandardCmd:
    """``omega_c`` from the first predicted state, ``T_c`` from stage-0 forces, clamped."""
    prm = model.params
    w = np.clip(states[1, 10:13], -prm.body_rate_max, prm.body_rate_max)
    T = float(np.sum(model.input_forces(inputs[0])))
    T = float(np.clip(T, 4 * prm.f_max * prm.r_min**2, 4 * prm.f_max * prm.r_max**2))
    return StandardCmd(T, w)


class LolNmpc(NmpcController):
    """NMPC on the rate-loop augmented model; its first input is the command."""

    def __init__(self, params: VehicleParams | None = None, ocp_config: OcpConfig | None = None,
                 rate_hz: float = 100.0, rpm_feedback: bool = True):
        self.params = params
        self.ocp_config = ocp_config
        self.rate_hz = rate_hz
        self.rpm_feedback = rpm_feedback

    def _model_variant(self) -> str:
        return "lol"

    def _extract(self, sol: OcpSolution) -> ControlCommand:
        u = sol.inputs[0]
        return LolCmd(float(u[0]), u[1:].copy())

    def _extract_inputs(self, u, x0, stale=False) -> ControlCommand:
        return LolCmd(float(u[0]), np.asarray(u[1:], dtype=float).copy(), stale=stale)

    def mixer_output(self) -> NDArray[np.float64] | None:
        if self.last_state_ is None or self._last_cmd is None:
            return None
        C, D = actuator_constraint_matrices(self.params_, include_integral=True)
        return C @ self.last_state_ + D @ self._last_cmd.to_array()


def standard_command(x_est: ArrayLike, reference: ReferenceTrajectory, t: float = 0.0,
                     motor_variant: str = "speed", params: VehicleParams | None = None,
                     config: OcpConfig | None = None) -> StandardCmd:
    """One-shot standard command from a model-layout state estimate."""
    ctrl = StandardNmpc(motor_variant, params, config).fit(reference)
    x = np.asarray(x_est, dtype=float)
    tel = _telemetry_from_state(x, ctrl.model_)
    return ctrl.command(t, tel)


def lol_command(x_est: ArrayLike, reference: ReferenceTrajectory, t: float = 0.0,
                params: VehicleParams | None = None, config: OcpConfig | None = None) -> LolCmd:
    """One-shot LoL command from a 20-element augmented state estimate."""
    ctrl = LolNmpc(params, config).fit(reference)
    return ctrl.command(t, np.asarray(x_est, dtype=float))


def _telemetry_from_state(x: NDArray, model: QuadModel) -> NDArray[np.float64]:
    """Inverse of :func:`estimate_from_telemetry` for the standard variants."""
    if x.shape != (model.nx,):
        raise VariantMismatch(f"state must have shape ({model.nx},), got {x.shape}")
    tel = np.zeros(TELEMETRY_DIM)
    tel[:13] = x[:13]
    prm = model.params
    if model.variant == "speed":
        r_frame = x[MOTOR] / prm.omega_motor_max
    elif model.variant == "force":
        r_frame = np.sqrt(np.maximum(x[MOTOR], 0.0) / prm.f_max)
    else:
        r_frame = np.full(4, prm.hover_throttle)
    tel[RPM][MIXER_TO_FRAME] = r_frame
    return tel


def make_controller(kind: str, motor_variant: str = "speed", **kwargs) -> NmpcController:
    """``kind`` is ``"lol"`` or ``"standard"``."""
    if kind == "lol":
        return LolNmpc(**kwargs)
    if kind == "standard":
        return StandardNmpc(motor_variant, **kwargs)
    raise InvalidParam(f"unknown controller kind {kind!r}; choose 'lol' or 'standard'")


__all__ = [
    "ControlCommand", "StandardCmd", "LolCmd", "PredictionRecord", "NmpcController",
    "StandardNmpc", "LolNmpc", "record_prediction", "estimate_from_telemetry",
    "standard_command", "standard_command_from", "lol_command", "make_controller",
]
