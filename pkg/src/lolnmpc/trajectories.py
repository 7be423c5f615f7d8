"""Benchmark reference trajectories and their CSV format.

Shapes are parametric curves traversed at a constant curve parameter rate;
the rate is set so that the peak acceleration hits a requested g-level.
Full reference states are rebuilt from the flat outputs (position, heading)
with the same linear drag model the controllers use.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.transform import Rotation

from . import so3
from .exceptions import FreeFallSingularity, InvalidParam, ParseError
from .params import VehicleParams, default_params

G0 = 9.81
MAX_ACCEL_G = 4.0
CSV_COLUMNS = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"]

FIG8_SIZE = 20.0
HYPO_R_OUT = 12.0
HYPO_R_IN = 4.0
HYPO_D = 6.0
SLANT = math.radians(15.0)
CRUISE_HEIGHT = 3.0


@dataclass
class ReferenceTrajectory:
    t: NDArray[np.float64]
    p: NDArray[np.float64]
    v: NDArray[np.float64]
    a: NDArray[np.float64]
    yaw: NDArray[np.float64]
    q: NDArray[np.float64]
    omega: NDArray[np.float64]
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def duration(self) -> float:
        """Span to evaluate over; samples may run past it for horizon look-ahead."""
        return float(self.meta.get("duration", self.t[-1] - self.t[0]))

    @property
    def peak_speed(self) -> float:
        return float(np.max(np.linalg.norm(self.v, axis=1)))

    @property
    def peak_accel(self) -> float:
        return float(np.max(np.linalg.norm(self.a, axis=1)))

    def __len__(self) -> int:
        return self.t.size

    def _locate(self, times):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        s = (times - self.t[0]) / self.dt
        s = np.clip(s, 0.0, self.t.size - 1)
        i0 = np.minimum(np.floor(s).astype(int), self.t.size - 2)
        return i0, s - i0

    def position(self, times) -> NDArray[np.float64]:
        i0, w = self._locate(times)
        return self.p[i0] * (1 - w)[:, None] + self.p[i0 + 1] * w[:, None]

    def sample(self, times) -> dict[str, NDArray[np.float64]]:
        """Interpolate at ``times``: linear for p, v, a, omega; slerp for q.

        Times outside the grid hold the end samples.
        """
        i0, w = self._locate(times)
        lin = lambda arr: arr[i0] * (1 - w)[:, None] + arr[i0 + 1] * w[:, None]  # noqa: E731
        q = np.array([so3.slerp(self.q[i], self.q[i + 1], wi) for i, wi in zip(i0, w)])
        return {"p": lin(self.p), "v": lin(self.v), "a": lin(self.a), "q": q, "omega": lin(self.omega)}

    def states(self, times) -> NDArray[np.float64]:
        """Rigid-body reference rows ``(p, q, v, w)`` at ``times``."""
        s = self.sample(times)
        return np.hstack([s["p"], s["q"], s["v"], s["omega"]])

    def collective_thrust(self, params: VehicleParams, times=None) -> NDArray[np.float64]:
        """Thrust needed to fly the reference with the linear drag model."""
        if times is None:
            a, v, q = self.a, self.v, self.q
        else:
            s = self.sample(times)
            a, v, q = s["a"], s["v"], s["q"]
        return _collective_thrust(a, v, q, params)


def _collective_thrust(a, v, q, params):
    g = np.array([0.0, 0.0, -params.gravity])
    out = np.empty(len(a))
    kd = np.asarray(params.drag)
    for i in range(len(a)):
        R = so3.rotation_matrix(q[i])
        vb = R.T @ v[i]
        # m a = R (T e3 - K vb) + m g  -> project onto body z
        out[i] = R[:, 2] @ (params.mass * (a[i] - g)) + kd[2] * vb[2]
    return out


def _attitudes(zb, yaw):
    """Quaternions with thrust axis ``zb`` (n, 3) and heading ``yaw`` (n,)."""
    xc = np.column_stack([np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)])
    yb = np.cross(zb, xc)
    yb /= np.linalg.norm(yb, axis=1)[:, None]
    xb = np.cross(yb, zb)
    R = np.stack([xb, yb, zb], axis=2)
    q = Rotation.from_matrix(R).as_quat()[:, [3, 0, 1, 2]]
    return q * np.where(q[:, :1] < 0, -1.0, 1.0)


def _solve_attitudes(a, v, yaw, params):
    """Attitudes with R(T e3 - K R' v) = m (a - g) and the requested heading."""
    g = np.array([0.0, 0.0, -params.gravity])
    kd = np.asarray(params.drag)
    base = params.mass * (a - g)
    zb = base / np.linalg.norm(base, axis=1)[:, None]
    for _ in range(50):
        q = _attitudes(zb, yaw)
        R = Rotation.from_quat(q[:, [1, 2, 3, 0]]).as_matrix()
        vb = np.einsum("nji,nj->ni", R, v)
        thrust_vec = base + np.einsum("nij,nj->ni", R, kd * vb)
        new = thrust_vec / np.linalg.norm(thrust_vec, axis=1)[:, None]
        done = np.max(np.linalg.norm(new - zb, axis=1)) < 1e-13
        zb = new
        if done:
            break
    return _attitudes(zb, yaw)


def flat_outputs_to_reference(t, p, v, a, yaw, params: VehicleParams | None = None,
                              meta: dict | None = None) -> ReferenceTrajectory:
    """Full reference (attitude and body rates) from flat-output samples.

    Raises :class:`FreeFallSingularity` where the required specific force
    nearly vanishes.
    """
    params = params or default_params()
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    yaw = np.broadcast_to(np.asarray(yaw, dtype=float), t.shape).copy()
    g = np.array([0.0, 0.0, -params.gravity])
    thrust_acc = np.linalg.norm(a - g, axis=1)
    if np.any(thrust_acc < 0.1):
        k = int(np.argmin(thrust_acc))
        raise FreeFallSingularity(f"|a - g| = {thrust_acc[k]:.3g} m/s^2 at t = {t[k]:.3f} s")
    q = _solve_attitudes(a, v, yaw, params)
    # sign-continuous copy for differentiation; stored quaternions keep w >= 0
    qc = q.copy()
    for i in range(1, t.size):
        if qc[i] @ qc[i - 1] < 0:
            qc[i] = -qc[i]
    omega = body_rates_from_quaternions(qc, float(t[1] - t[0]))
    return ReferenceTrajectory(t, p, v, a, yaw, q, omega, dict(meta or {}))


def body_rates_from_quaternions(q: NDArray, dt: float) -> NDArray[np.float64]:
    """Body rates ``2 vec(q^-1 ⊗ dq/dt)`` with central differences (sign-continuous q)."""
    qd = np.gradient(q, dt, axis=0, edge_order=2)
    w, x, y, z = q.T
    dw, dx, dy, dz = qd.T
    return 2.0 * np.column_stack([
        w * dx - x * dw - y * dz + z * dy,
        w * dy + x * dz - y * dw - z * dx,
        w * dz - x * dy + y * dx - z * dw,
    ])


def _time_scaled(curve, period_param, target_accel_g, laps, dt, params, meta, margin):
    """Sample ``curve(theta) -> (pos, d1, d2)`` at the rate hitting the target accel."""
    dense = np.linspace(0.0, period_param, 20001)
    _, _, d2 = curve(dense)
    peak_unit = float(np.max(np.linalg.norm(d2, axis=1)))
    rate = math.sqrt(target_accel_g * G0 / peak_unit)
    lap_time = period_param / rate
    duration = laps * lap_time
    n = int(round((duration + margin) / dt)) + 1
    t = np.arange(n) * dt
    pos, d1, d2 = curve(rate * t)
    v = d1 * rate
    a = d2 * rate**2
    meta = dict(meta)
    meta.update(target_accel_g=target_accel_g, lap_time=lap_time, duration=duration,
                peak_speed=float(np.max(np.linalg.norm(v[t <= duration + 1e-9], axis=1))))
    ref = flat_outputs_to_reference(t, pos, v, a, 0.0, params, meta)
    w_peak = float(np.max(np.abs(ref.omega)))
    if w_peak > params.body_rate_max:
        raise InvalidParam(
            f"{meta.get('shape')} at {target_accel_g} g needs body rate {w_peak:.2f} rad/s "
            f"> limit {params.body_rate_max}"
        )
    ref.meta["peak_body_rate"] = w_peak
    return ref


def _check_accel(target_accel):
    if not 0.0 < target_accel <= MAX_ACCEL_G:
        raise InvalidParam(f"target acceleration must be in (0, {MAX_ACCEL_G}] g, got {target_accel}")


def make_fig8(size: float = FIG8_SIZE, target_accel: float = 2.5, slant: float = 0.0, *,
              laps: int = 1, dt: float = 0.005, height: float = CRUISE_HEIGHT,
              params: VehicleParams | None = None, margin: float = 2.0) -> ReferenceTrajectory:
    """Gerono lemniscate of half-width ``size`` in a plane tilted by ``slant`` about x."""
    if not size > 0:
        raise InvalidParam(f"size must be positive, got {size}")
    _check_accel(target_accel)
    A = B = size
    c, s = math.cos(slant), math.sin(slant)

    def curve(th):
        x = A * np.sin(th)
        y = B * np.sin(th) * np.cos(th)
        dx = A * np.cos(th)
        dy = B * np.cos(2 * th)
        ddx = -A * np.sin(th)
        ddy = -2 * B * np.sin(2 * th)
        pos = np.column_stack([x, c * y, height + s * y])
        d1 = np.column_stack([dx, c * dy, s * dy])
        d2 = np.column_stack([ddx, c * ddy, s * ddy])
        return pos, d1, d2

    name = "fig8" if slant == 0.0 else "slanted_fig8"
    return _time_scaled(curve, 2 * math.pi, target_accel, laps, dt, params or default_params(),
                        {"shape": name, "size": size, "slant": slant}, margin)


def make_hypotrochoid(R_out: float = HYPO_R_OUT, r_in: float = HYPO_R_IN, d: float = HYPO_D,
                      target_accel: float = 3.5, *, laps: int = 1, dt: float = 0.005,
                      height: float = CRUISE_HEIGHT, params: VehicleParams | None = None,
                      margin: float = 2.0) -> ReferenceTrajectory:
    """Hypotrochoid traced in a horizontal plane."""
    if not 0 < r_in < R_out:
        raise InvalidParam(f"need 0 < r_in < R_out, got r_in={r_in}, R_out={R_out}")
    if not d >= 0:
        raise InvalidParam(f"d must be non-negative, got {d}")
    _check_accel(target_accel)
    k = (R_out - r_in) / r_in
    ratio = Fraction(k).limit_denominator(1000)
    period = 2 * math.pi * ratio.denominator
    Rr = R_out - r_in

    def curve(th):
        pos = np.column_stack([Rr * np.cos(th) + d * np.cos(k * th),
                               Rr * np.sin(th) - d * np.sin(k * th),
                               np.full_like(th, height)])
        d1 = np.column_stack([-Rr * np.sin(th) - d * k * np.sin(k * th),
                              Rr * np.cos(th) - d * k * np.cos(k * th),
                              np.zeros_like(th)])
        d2 = np.column_stack([-Rr * np.cos(th) - d * k * k * np.cos(k * th),
                              -Rr * np.sin(th) + d * k * k * np.sin(k * th),
                              np.zeros_like(th)])
        return pos, d1, d2

    return _time_scaled(curve, period, target_accel, laps, dt, params or default_params(),
                        {"shape": "hypotrochoid", "R_out": R_out, "r_in": r_in, "d": d}, margin)


def make_hover(position=(0.0, 0.0, CRUISE_HEIGHT), duration: float = 10.0, dt: float = 0.01,
               params: VehicleParams | None = None, margin: float = 2.0) -> ReferenceTrajectory:
    n = int(round((duration + margin) / dt)) + 1
    t = np.arange(n) * dt
    p = np.tile(np.asarray(position, dtype=float), (n, 1))
    z = np.zeros((n, 3))
    return flat_outputs_to_reference(t, p, z, z.copy(), 0.0, params,
                                     {"shape": "hover", "duration": duration, "target_accel_g": 0.0})


PRESETS = {
    "fig8": lambda g, **kw: make_fig8(FIG8_SIZE, g, 0.0, **kw),
    "slanted_fig8": lambda g, **kw: make_fig8(FIG8_SIZE, g, SLANT, **kw),
    "hypotrochoid": lambda g, **kw: make_hypotrochoid(HYPO_R_OUT, HYPO_R_IN, HYPO_D, g, **kw),
}


def make_preset(name: str, g_level: float, **kwargs) -> ReferenceTrajectory:
    if name == "hover":
        return make_hover(**kwargs)
    try:
        factory = PRESETS[name]
    except KeyError:
        raise InvalidParam(f"unknown trajectory {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(g_level, **kwargs)


def save_csv(traj: ReferenceTrajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i in range(traj.t.size):
            row = [traj.t[i], *traj.p[i], *traj.q[i], *traj.v[i], *traj.omega[i]]
            writer.writerow([repr(float(x)) for x in row])


def load_csv(path: str | Path, params: VehicleParams | None = None,
             grid_tol: float = 1e-6) -> ReferenceTrajectory:
    """Read a reference written in the ``t,px,...,wz`` schema.

    Accelerations are recovered by differentiating the velocity samples.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file", row=0) from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"{path}: missing column(s) {', '.join(missing)}", row=0,
                             column=missing[0])
        idx = [header.index(c) for c in CSV_COLUMNS]
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            vals = []
            for c, j in zip(CSV_COLUMNS, idx):
                try:
                    vals.append(float(raw[j]))
                except (IndexError, ValueError):
                    raise ParseError(f"{path}:{lineno}: bad value in column {c}", row=lineno,
                                     column=c) from None
            rows.append(vals)
    if len(rows) < 3:
        raise ParseError(f"{path}: need at least 3 samples, got {len(rows)}")
    data = np.array(rows)
    t = data[:, 0]
    steps = np.diff(t)
    dt = float(np.mean(steps))
    bad = np.flatnonzero(np.abs(steps - dt) > grid_tol)
    if dt <= 0 or bad.size:
        row = int(bad[0]) + 3 if bad.size else 2
        raise ParseError(f"{path}:{row}: time grid is not uniform", row=row, column="t")
    q = data[:, 4:8]
    v = data[:, 8:11]
    a = np.gradient(v, dt, axis=0, edge_order=2)
    yaw = np.arctan2(2 * (q[:, 0] * q[:, 3] + q[:, 1] * q[:, 2]),
                     1 - 2 * (q[:, 2] ** 2 + q[:, 3] ** 2))
    return ReferenceTrajectory(t, data[:, 1:4], v, a, yaw, q, data[:, 11:14],
                               {"shape": path.stem, "source": str(path)})
