"""Quadrotor dynamics: rigid body, drag, motor allocation and the low-level
rate-loop augmented model.

State layouts (all quaternions scalar-first)::

    rigid body   p[0:3] q[3:7] v[7:10] w[10:13]
    "none"       rigid body only, input = motor forces (N)
    "speed"      + motor speeds Omega[13:17] (rad/s), input = commanded speeds
    "force"      + motor forces f[13:17] (N), input = commanded forces
    "lol"        + rate-loop integral z[13:16], normalized speeds r[16:20],
                 input = (collective throttle, commanded body rates)

Motors of the standard variants are numbered like the columns of the
allocation matrix ("frame order"). The flight-stack mixer numbers them
differently ("mixer order"); the ``lol`` variant keeps ``r`` in mixer order
because that is what the mixer and the RPM telemetry report.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _kernels as K
from .exceptions import VariantMismatch
from .params import VehicleParams

MIXER = K.MIXER.copy()
MIXER_TO_FRAME = K.MIXER_TO_FRAME.copy()
FRAME_TO_MIXER = K.FRAME_TO_MIXER.copy()

POS = slice(0, 3)
QUAT = slice(3, 7)
VEL = slice(7, 10)
RATE = slice(10, 13)
MOTOR = slice(13, 17)
INTEGRAL = slice(13, 16)
RPM = slice(16, 20)

VARIANTS = {"none": K.MODEL_NONE, "speed": K.MODEL_SPEED, "force": K.MODEL_FORCE, "lol": K.MODEL_LOL}


def drag_force(v_body: ArrayLike, params: VehicleParams) -> NDArray[np.float64]:
    """Linear body-frame drag ``-k_v * v_B`` (N)."""
    return -np.asarray(params.drag) * np.asarray(v_body, dtype=float)


def allocation_matrix(params: VehicleParams) -> NDArray[np.float64]:
    """Map per-motor forces (frame order) to collective thrust and body torques."""
    a = params.arm_length / np.sqrt(2.0)
    k = params.torque_const
    return np.array(
        [
            [1.0, 1.0, 1.0, 1.0],
            [a, -a, -a, a],
            [-a, -a, a, a],
            [k, -k, k, -k],
        ]
    )


def allocate(f: ArrayLike, params: VehicleParams) -> tuple[float, NDArray[np.float64]]:
    """Collective thrust ``T`` and torque vector from frame-order motor forces."""
    w = allocation_matrix(params) @ np.asarray(f, dtype=float)
    return float(w[0]), w[1:]


def mix(t_c: float, tau_c: ArrayLike) -> NDArray[np.float64]:
    """Per-motor throttle (mixer order) from collective throttle and normalized torque."""
    return MIXER @ np.concatenate([[t_c], np.asarray(tau_c, dtype=float)])


def mixer_to_frame(values: ArrayLike) -> NDArray[np.float64]:
    return np.asarray(values)[..., MIXER_TO_FRAME]


def frame_to_mixer(values: ArrayLike) -> NDArray[np.float64]:
    return np.asarray(values)[..., FRAME_TO_MIXER]


def pid_torque(omega_c: ArrayLike, omega: ArrayLike, z: ArrayLike,
               params: VehicleParams) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Rate PI law: returns (normalized torque command, integral derivative)."""
    e = np.asarray(omega_c, dtype=float) - np.asarray(omega, dtype=float)
    tau_c = np.asarray(params.k_p) * e + np.asarray(params.k_i) * np.asarray(z, dtype=float)
    return tau_c, e


def thrust_from_rpm(r: ArrayLike, params: VehicleParams) -> NDArray[np.float64]:
    r = np.asarray(r, dtype=float)
    return params.f_max * r * r


def rpm_from_thrust(f: ArrayLike, params: VehicleParams) -> NDArray[np.float64]:
    return np.sqrt(np.maximum(np.asarray(f, dtype=float), 0.0) / params.f_max)


def _check(x, u, model):
    nx, nu = K.dims(model)
    if x.shape != (nx,) or u.shape != (nu,):
        raise VariantMismatch(f"expected state ({nx},) and input ({nu},), got {x.shape} and {u.shape}")


def deriv_standard(x: ArrayLike, u: ArrayLike, params: VehicleParams,
                   variant: str = "speed") -> NDArray[np.float64]:
    """Time derivative of a standard-model state.

    ``variant`` is ``"none"`` (13 states, input = forces), ``"speed"`` (17
    states, input = commanded motor speeds) or ``"force"`` (17 states,
    input = commanded motor forces).
    """
    if variant not in ("none", "speed", "force"):
        raise VariantMismatch(f"unknown standard variant {variant!r}")
    model = VARIANTS[variant]
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check(x, u, model)
    out = np.empty_like(x)
    K.dynamics(model, x, u, params.to_array(), out)
    return out


def deriv_lol(x: ArrayLike, u: ArrayLike, params: VehicleParams) -> NDArray[np.float64]:
    """Time derivative of the rate-loop augmented state under ``u = (t_c, w_c)``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check(x, u, K.MODEL_LOL)
    out = np.empty_like(x)
    K.dynamics(K.MODEL_LOL, x, u, params.to_array(), out)
    return out


def actuator_constraint_matrices(params: VehicleParams, include_integral: bool = False
                                 ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Affine map ``r_c = C x + D u`` from augmented state/input to mixer output.

    With ``include_integral=False`` only the proportional rate path enters
    ``C``. ``include_integral=True`` adds the ``k_i z`` columns so that the
    map equals the full modelled mixer output.
    """
    kp = np.asarray(params.k_p)
    D = MIXER @ np.diag(np.concatenate([[1.0], kp]))
    C = np.zeros((4, 20))
    C[:, RATE] = -MIXER[:, 1:] @ np.diag(kp)
    if include_integral:
        C[:, INTEGRAL] = MIXER[:, 1:] @ np.diag(params.k_i)
    return C, D


@dataclass(frozen=True)
class QuadModel:
    """A dynamics variant bound to a vehicle; the unit the OCP and plant work on."""

    params: VehicleParams
    variant: str = "lol"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise VariantMismatch(f"unknown variant {self.variant!r}")

    @property
    def kind(self) -> int:
        return VARIANTS[self.variant]

    @property
    def nx(self) -> int:
        return K.dims(self.kind)[0]

    @property
    def nu(self) -> int:
        return K.dims(self.kind)[1]

    @property
    def is_lol(self) -> bool:
        return self.variant == "lol"

    @cached_property
    def p(self) -> NDArray[np.float64]:
        return self.params.to_array()

    def __call__(self, x, u):
        x = np.asarray(x)
        out = np.empty_like(x)
        K.dynamics(self.kind, x, np.asarray(u), self.p, out)
        return out

    def step(self, x, u, dt: float, substeps: int = 1) -> NDArray[np.float64]:
        y = K.rk4(self.kind, np.asarray(x, dtype=float), np.asarray(u, dtype=float), dt, substeps, self.p)
        K.renormalize_quat(y)
        return y

    def step_raw(self, x, u, dt: float, substeps: int = 1) -> NDArray[np.float64]:
        """RK4 step without quaternion renormalization."""
        return K.rk4(self.kind, np.asarray(x, dtype=float), np.asarray(u, dtype=float), dt, substeps, self.p)

    def step_sens(self, x, u, dt: float, substeps: int = 1):
        """One RK4 step with Jacobians; quaternion renormalized after extraction."""
        y, A, B = K.rk4_sens(self.kind, np.asarray(x, dtype=float), np.asarray(u, dtype=float),
                             dt, substeps, self.p)
        K.renormalize_quat(y)
        return y, A, B

    def rollout(self, x0, U, dt: float, substeps: int = 1) -> NDArray[np.float64]:
        return K.rollout(self.kind, np.asarray(x0, dtype=float), np.ascontiguousarray(U, dtype=float),
                         dt, substeps, self.p)

    def horizon_sens(self, X, U, dt: float, substeps: int = 1):
        return K.horizon_sens(self.kind, np.ascontiguousarray(X, dtype=float),
                              np.ascontiguousarray(U, dtype=float), dt, substeps, self.p)

    # scaling used by the OCP: motor states and inputs are weighted in
    # normalized units so that one set of weights serves every variant
    @cached_property
    def motor_scale(self) -> float:
        return {"none": 1.0, "speed": self.params.omega_motor_max,
                "force": self.params.f_max, "lol": 1.0}[self.variant]

    @cached_property
    def input_scale(self) -> NDArray[np.float64]:
        if self.variant == "lol":
            return np.ones(4)
        if self.variant == "speed":
            return np.full(4, self.params.omega_motor_max)
        return np.full(4, self.params.f_max)

    def motor_forces(self, x) -> NDArray[np.float64]:
        """Per-motor forces implied by state rows ``x`` (..., nx), in mixer order."""
        x = np.asarray(x)
        if self.variant == "lol":
            return thrust_from_rpm(x[..., RPM], self.params)
        if self.variant == "speed":
            return frame_to_mixer(self.params.thrust_coeff * x[..., MOTOR] ** 2)
        if self.variant == "force":
            return frame_to_mixer(x[..., MOTOR])
        raise VariantMismatch("the 'none' variant carries no motor state")

    def input_forces(self, u) -> NDArray[np.float64]:
        """Commanded per-motor forces (frame order) of a standard-variant input."""
        u = np.asarray(u)
        if self.variant == "speed":
            return self.params.thrust_coeff * u**2
        if self.variant in ("none", "force"):
            return u
        raise VariantMismatch("lol inputs are not motor forces")

    def hover_state(self, position=(0.0, 0.0, 0.0), yaw: float = 0.0) -> NDArray[np.float64]:
        x = np.zeros(self.nx)
        x[POS] = position
        x[QUAT] = [np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)]
        x[MOTOR.start:] = 0.0
        if self.variant == "speed":
            x[MOTOR] = np.sqrt(self.params.weight / (4 * self.params.thrust_coeff))
        elif self.variant == "force":
            x[MOTOR] = self.params.weight / 4
        elif self.variant == "lol":
            x[RPM] = self.params.hover_throttle
        return x

    def hover_input(self) -> NDArray[np.float64]:
        prm = self.params
        if self.variant == "speed":
            return np.full(4, np.sqrt(prm.weight / (4 * prm.thrust_coeff)))
        if self.variant in ("none", "force"):
            return np.full(4, prm.weight / 4)
        return np.array([prm.hover_throttle, 0.0, 0.0, 0.0])

    def motor_reference(self, collective_thrust: ArrayLike) -> NDArray[np.float64]:
        """Equal-split motor state for a collective thrust, in this variant's units."""
        T = np.maximum(np.asarray(collective_thrust, dtype=float), 0.0)[..., None] * np.ones(4)
        prm = self.params
        if self.variant == "speed":
            return np.sqrt(T / (4 * prm.thrust_coeff))
        if self.variant == "force":
            return T / 4
        if self.variant == "lol":
            return np.sqrt(T / (4 * prm.f_max))
        return T / 4

    def input_bounds(self, body_rate_limit: float | None = None):
        """Hard input box ``(u_min, u_max)``."""
        prm = self.params
        if self.variant == "lol":
            w = prm.body_rate_max if body_rate_limit is None else body_rate_limit
            return np.array([prm.r_min, -w, -w, -w]), np.array([prm.r_max, w, w, w])
        if self.variant == "speed":
            return (np.full(4, prm.r_min * prm.omega_motor_max),
                    np.full(4, prm.r_max * prm.omega_motor_max))
        return np.full(4, prm.r_min**2 * prm.f_max), np.full(4, prm.r_max**2 * prm.f_max)
