"""Ground-truth simulator of the cascaded flight stack.

Each low-level tick samples the rate PID once, mixes, desaturates, and then
integrates the rigid body and the first-order motors over the tick with the
mixer output held. The controller runs at a lower rate and its commands
reach the low-level loop after a configurable latency.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numba
import numpy as np
from numba import njit
from numpy.typing import ArrayLike, NDArray

from . import __version__, so3
from ._kernels import MIXER, MIXER_TO_FRAME, _rigid_body
from .controllers import LolCmd, NmpcController, PredictionRecord, StandardCmd
from .exceptions import DivergedState, InvalidParam
from .model import RPM, actuator_constraint_matrices
from .params import VehicleParams, default_params
from .trajectories import ReferenceTrajectory

DIVERGENCE_RADIUS = 1e3
STATE_COLUMNS = ["px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz",
                 "zx", "zy", "zz", "r1", "r2", "r3", "r4"]
LOG_COLUMNS = ["t", *STATE_COLUMNS, "cmd_thrust", "cmd_wx", "cmd_wy", "cmd_wz", "clip_count"]


class Desaturation(str, Enum):
    CLIP = "clip"
    COLLECTIVE_SHIFT = "collective_shift"


_POLICY_CODE = {Desaturation.CLIP: 0, Desaturation.COLLECTIVE_SHIFT: 1}


@dataclass(frozen=True)
class PlantConfig:
    low_level_hz: float = 1000.0
    control_hz: float = 100.0
    desaturation: Desaturation = Desaturation.COLLECTIVE_SHIFT
    latency_ticks: int = 10
    k_d: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gain_mismatch: float = 0.0  # relative error of the true PID gains
    integral_limit: float = 2.0
    # sensor noise std on the estimate: position, velocity, attitude (rad), body rate
    noise_std: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    substeps: int = 1

    def __post_init__(self):
        if not (self.low_level_hz > 0 and self.control_hz > 0):
            raise InvalidParam("loop rates must be positive")
        if self.low_level_hz < self.control_hz:
            raise InvalidParam("low-level rate must be at least the control rate")
        ratio = self.low_level_hz / self.control_hz
        if abs(ratio - round(ratio)) > 1e-9:
            raise InvalidParam("low-level rate must be an integer multiple of the control rate")
        if self.latency_ticks < 0:
            raise InvalidParam("latency must be non-negative")
        if min(self.noise_std) < 0:
            raise InvalidParam("noise std must be non-negative")
        object.__setattr__(self, "desaturation", Desaturation(self.desaturation))

    @property
    def ticks_per_control(self) -> int:
        return int(round(self.low_level_hz / self.control_hz))

    @property
    def low_level_dt(self) -> float:
        return 1.0 / self.low_level_hz

    def to_dict(self) -> dict:
        d = asdict(self)
        d["desaturation"] = self.desaturation.value
        return d


@njit(cache=True)
def _desaturate(rc, policy):
    """Bring ``rc`` into [0, 1] in place; returns True when it was outside."""
    lo = rc.min()
    hi = rc.max()
    if lo >= 0.0 and hi <= 1.0:
        return False
    if policy == 0:
        for i in range(4):
            rc[i] = min(max(rc[i], 0.0), 1.0)
        return True
    mean = rc.mean()
    span = hi - lo
    if span > 1.0:
        for i in range(4):
            rc[i] = mean + (rc[i] - mean) / span
        lo = rc.min()
        hi = rc.max()
    shift = 0.0
    if lo < 0.0:
        shift = -lo
    elif hi > 1.0:
        shift = 1.0 - hi
    for i in range(4):
        rc[i] = min(max(rc[i] + shift, 0.0), 1.0)
    return True


@njit(cache=True)
def _plant_deriv(x, rc, P, out):
    fmax = P[7]
    f0 = fmax * x[16 + MIXER_TO_FRAME[0]] ** 2
    f1 = fmax * x[16 + MIXER_TO_FRAME[1]] ** 2
    f2 = fmax * x[16 + MIXER_TO_FRAME[2]] ** 2
    f3 = fmax * x[16 + MIXER_TO_FRAME[3]] ** 2
    _rigid_body(x, f0, f1, f2, f3, P, out)
    out[13] = 0.0
    out[14] = 0.0
    out[15] = 0.0
    for i in range(4):
        out[16 + i] = (rc[i] - x[16 + i]) / P[9]


@njit(cache=True)
def _plant_rk4(x, rc, h, nsub, P):
    n = x.shape[0]
    hs = h / nsub
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for _ in range(nsub):
        _plant_deriv(x, rc, P, k1)
        for i in range(n):
            tmp[i] = x[i] + 0.5 * hs * k1[i]
        _plant_deriv(tmp, rc, P, k2)
        for i in range(n):
            tmp[i] = x[i] + 0.5 * hs * k2[i]
        _plant_deriv(tmp, rc, P, k3)
        for i in range(n):
            tmp[i] = x[i] + hs * k3[i]
        _plant_deriv(tmp, rc, P, k4)
        for i in range(n):
            x[i] += hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    nrm = np.sqrt(x[3] ** 2 + x[4] ** 2 + x[5] ** 2 + x[6] ** 2)
    s = 1.0 / nrm if x[3] >= 0.0 else -1.0 / nrm
    for i in range(3, 7):
        x[i] *= s
    for i in range(16, 20):
        x[i] = min(max(x[i], 0.0), 1.0)


@njit(cache=True)
def _run_ticks(x, throttle, rates, h, nsub, P, kd, zlim, policy, e_prev, rows, clip_count):
    """Advance ``len(throttle)`` low-level ticks; row i holds the state after tick i."""
    rc = np.empty(4)
    for k in range(throttle.shape[0]):
        e0 = rates[k, 0] - x[10]
        e1 = rates[k, 1] - x[11]
        e2 = rates[k, 2] - x[12]
        x[13] = min(max(x[13] + e0 * h, -zlim), zlim)
        x[14] = min(max(x[14] + e1 * h, -zlim), zlim)
        x[15] = min(max(x[15] + e2 * h, -zlim), zlim)
        t0 = P[14] * e0 + P[17] * x[13] + kd[0] * (e0 - e_prev[0]) / h
        t1 = P[15] * e1 + P[18] * x[14] + kd[1] * (e1 - e_prev[1]) / h
        t2 = P[16] * e2 + P[19] * x[15] + kd[2] * (e2 - e_prev[2]) / h
        e_prev[0] = e0
        e_prev[1] = e1
        e_prev[2] = e2
        for i in range(4):
            rc[i] = MIXER[i, 0] * throttle[k] + MIXER[i, 1] * t0 + MIXER[i, 2] * t1 + MIXER[i, 3] * t2
        if _desaturate(rc, policy):
            clip_count += 1
        _plant_rk4(x, rc, h, nsub, P)
        rows[k, :] = x
    return clip_count


class Plant:
    """Mutable plant state: truth vector, clip counter and PID memory.

    ``x`` follows the augmented layout ``(p, q, v, w, z, r)`` with ``r`` in
    mixer order.
    """

    def __init__(self, params: VehicleParams | None = None, config: PlantConfig | None = None,
                 x0: ArrayLike | None = None):
        self.params = params or default_params()
        self.config = config or PlantConfig()
        scale = 1.0 + self.config.gain_mismatch
        true = self.params.replace(k_p=tuple(np.asarray(self.params.k_p) * scale),
                                   k_i=tuple(np.asarray(self.params.k_i) * scale))
        self._P = true.to_array()
        self._kd = np.asarray(self.config.k_d, dtype=float)
        self._policy = _POLICY_CODE[self.config.desaturation]
        if x0 is None:
            x0 = np.zeros(20)
            x0[3] = 1.0
            x0[RPM] = self.params.hover_throttle
        self.x = np.array(x0, dtype=float)
        if self.x.shape != (20,):
            raise InvalidParam(f"plant state must have 20 entries, got {self.x.shape}")
        self.clip_count = 0
        self.tick = 0
        self._e_prev = np.zeros(3)

    @property
    def t(self) -> float:
        return self.tick * self.config.low_level_dt

    def advance(self, throttle: ArrayLike, rates: ArrayLike) -> NDArray[np.float64]:
        """Run one low-level tick per row of the held command arrays."""
        th = np.ascontiguousarray(np.atleast_1d(throttle), dtype=float)
        wr = np.ascontiguousarray(np.atleast_2d(rates), dtype=float)
        rows = np.empty((th.size, 20))
        self.clip_count = _run_ticks(self.x, th, wr, self.config.low_level_dt, self.config.substeps,
                                     self._P, self._kd, self.config.integral_limit, self._policy,
                                     self._e_prev, rows, self.clip_count)
        self.tick += th.size
        return rows


def low_level_tick(plant: Plant, cmd: StandardCmd | LolCmd) -> Plant:
    """Advance ``plant`` by one low-level tick under ``cmd`` (no latency)."""
    plant.advance([cmd.throttle(plant.params)], [cmd.omega_c])
    return plant


@dataclass
class FlightLog:
    """Per-substep truth and commands plus per-control-tick diagnostics."""

    t: NDArray[np.float64]
    states: NDArray[np.float64]
    commands: NDArray[np.float64]
    clip_counts: NDArray[np.int64]
    tick_t: NDArray[np.float64]
    tick_states: NDArray[np.float64]
    tick_commands: NDArray[np.float64]
    solve_time: NDArray[np.float64]
    kkt: NDArray[np.float64]
    qp_iterations: NDArray[np.int64]
    stale: NDArray[np.bool_]
    max_slack: NDArray[np.float64]
    mixer_output: NDArray[np.float64]
    predictions: list[PredictionRecord] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def clip_events(self) -> int:
        return int(self.clip_counts[-1]) if self.clip_counts.size else 0

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if self.t.size else 0.0

    @property
    def max_speed(self) -> float:
        return float(np.max(np.linalg.norm(self.states[:, 7:10], axis=1)))

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for i in range(self.t.size):
                w.writerow([repr(float(self.t[i])), *(repr(float(v)) for v in self.states[i]),
                            *(repr(float(v)) for v in self.commands[i]), int(self.clip_counts[i])])
        return path

    def write_metadata(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")
        return path

    def summary(self) -> dict:
        st = self.solve_time[np.isfinite(self.solve_time)]
        return {
            "duration_s": self.duration,
            "max_speed": self.max_speed,
            "clip_events": self.clip_events,
            "stale_ticks": int(np.sum(self.stale)),
            "mean_solve_us": float(np.mean(st) * 1e6) if st.size else float("nan"),
        }


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _noisy(x: NDArray, rng: np.random.Generator | None, std) -> NDArray:
    if rng is None:
        return x
    y = x.copy()
    sp, sv, sa, sw = std
    y[0:3] += rng.normal(0.0, sp, 3)
    y[7:10] += rng.normal(0.0, sv, 3)
    y[10:13] += rng.normal(0.0, sw, 3)
    if sa > 0:
        rotvec = rng.normal(0.0, sa, 3)
        angle = float(np.linalg.norm(rotvec))
        if angle > 0:
            y[3:7] = so3.quat_multiply(y[3:7], so3.from_axis_angle(rotvec, angle))
    return y


def initial_state(reference: ReferenceTrajectory, params: VehicleParams, t0: float = 0.0) -> NDArray[np.float64]:
    """Flying start: reference state at ``t0`` with motors at the trim thrust."""
    x = np.zeros(20)
    x[:13] = reference.states([t0])[0]
    T = reference.collective_thrust(params, [t0])[0]
    x[RPM] = np.sqrt(max(T, 0.0) / (4 * params.f_max))
    return x


def run_closed_loop(controller: NmpcController, reference: ReferenceTrajectory,
                    duration: float | None = None, plant_config: PlantConfig | None = None,
                    plant_params: VehicleParams | None = None, seed: int = 0,
                    record_predictions: bool = True) -> FlightLog:
    """Fly ``reference`` with ``controller`` in the loop.

    The controller must be unfitted or fitted on ``reference``; it is refit
    here. Raises :class:`DivergedState` when the vehicle leaves a 1 km ball or
    the state turns non-finite.
    """
    cfg = plant_config or PlantConfig()
    controller.set_params(rate_hz=cfg.control_hz)
    controller.fit(reference)
    params = controller.params_
    plant_params = plant_params or params
    duration = reference.duration if duration is None else float(duration)
    if not duration > 0:
        raise InvalidParam("duration must be positive")
    n_ticks = int(round(duration * cfg.control_hz))
    per = cfg.ticks_per_control
    h = cfg.low_level_dt
    plant = Plant(plant_params, cfg, initial_state(reference, plant_params))
    rng = np.random.default_rng(seed) if max(cfg.noise_std) > 0 else None
    is_lol = controller.model_.is_lol
    C, D = actuator_constraint_matrices(params, include_integral=True)

    n_sub = n_ticks * per
    t_log = np.arange(n_sub + 1) * h
    states = np.empty((n_sub + 1, 20))
    states[0] = plant.x
    commands = np.empty((n_sub + 1, 4))
    clips = np.zeros(n_sub + 1, dtype=np.int64)
    tick_states = np.empty((n_ticks, 20))
    tick_cmd = np.empty((n_ticks, 4))
    solve_time = np.full(n_ticks, np.nan)
    kkt = np.full(n_ticks, np.nan)
    iters = np.zeros(n_ticks, dtype=np.int64)
    stale = np.zeros(n_ticks, dtype=bool)
    slack = np.zeros(n_ticks)
    mixer_out = np.full((n_ticks, 4), np.nan)
    predictions: list[PredictionRecord] = []

    # trim command active until the first controller output arrives
    T0 = reference.collective_thrust(params, [0.0])[0]
    w0 = reference.sample([0.0])["omega"][0]
    thr_hist = np.empty(n_sub + cfg.latency_ticks)
    rate_hist = np.empty((n_sub + cfg.latency_ticks, 3))
    thr_hist[:] = np.sqrt(max(T0, 0.0) / (4 * plant_params.f_max))
    rate_hist[:] = w0
    commands[0, 0] = T0 if not is_lol else thr_hist[0]
    commands[0, 1:] = w0

    for k in range(n_ticks):
        tk = k * per * h
        tick_states[k] = plant.x
        est = _noisy(plant.x, rng, cfg.noise_std)
        cmd = controller.command(tk, est)
        sol = controller.last_solution_
        solve_time[k] = sol.solve_time
        kkt[k] = sol.kkt_residual
        iters[k] = sol.iterations
        slack[k] = sol.max_slack
        stale[k] = cmd.stale
        arr = cmd.to_array()
        tick_cmd[k] = arr
        if is_lol:
            mixer_out[k] = C @ controller.last_state_ + D @ arr
        if record_predictions and not cmd.stale and controller.last_prediction_ is not None:
            predictions.append(controller.last_prediction_)
        start = k * per + cfg.latency_ticks
        thr_hist[start:] = cmd.throttle(plant_params)
        rate_hist[start:] = cmd.omega_c
        sl = slice(k * per, (k + 1) * per)
        rows = plant.advance(thr_hist[sl], rate_hist[sl])
        states[k * per + 1 : (k + 1) * per + 1] = rows
        clips[k * per + 1 : (k + 1) * per + 1] = plant.clip_count
        # log the command in effect during each substep, in the controller's units
        applied = thr_hist[sl] if is_lol else 4 * plant_params.f_max * thr_hist[sl] ** 2
        commands[k * per + 1 : (k + 1) * per + 1, 0] = applied
        commands[k * per + 1 : (k + 1) * per + 1, 1:] = rate_hist[sl]
        x = plant.x
        if not np.all(np.isfinite(x)) or np.linalg.norm(x[:3]) > DIVERGENCE_RADIUS:
            raise DivergedState(f"vehicle diverged at t = {plant.t:.3f} s")

    meta = {
        "controller": type(controller).__name__,
        "controller_params": {k: _jsonable(v) for k, v in controller.get_params().items()},
        "plant": cfg.to_dict(),
        "vehicle": plant_params.to_dict(),
        "trajectory": {k: _jsonable(v) for k, v in reference.meta.items()},
        "duration": duration,
        "seed": seed,
        "versions": {"lolnmpc": __version__, "numpy": np.__version__, "numba": numba.__version__,
                     "python": platform.python_version()},
    }
    meta["config_hash"] = config_hash({k: meta[k] for k in ("controller", "controller_params", "plant",
                                                          "vehicle", "trajectory", "duration", "seed")})
    return FlightLog(t_log, states, commands, clips, np.arange(n_ticks) * per * h, tick_states, tick_cmd,
                     solve_time, kkt, iters, stale, slack, mixer_out, predictions, meta)


def _jsonable(v):
    if v is None or isinstance(v, (bool, int, float, str)):
        return v
    if isinstance(v, Enum):
        return v.value
    if hasattr(v, "to_dict"):
        return v.to_dict()
    if hasattr(v, "__dataclass_fields__"):
        return {k: _jsonable(x) for k, x in asdict(v).items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in np.asarray(v).tolist()] if isinstance(v, np.ndarray) else [
            _jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return str(v)
