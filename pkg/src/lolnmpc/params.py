"""Vehicle description and its JSON config format.

Field names in the JSON file match the :class:`VehicleParams` attributes.
``thrust_coeff`` may be omitted; it is then derived as
``f_max / omega_motor_max**2``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

_VECTOR_FIELDS = ("inertia", "drag", "k_p", "k_i")

# Index layout of the flat parameter vector consumed by the compiled kernels.
P_MASS, P_JX, P_JY, P_JZ, P_ARM, P_KAPPA, P_CF, P_FMAX, P_OMAX = range(9)
P_KMOT, P_KMOTF, P_KVX, P_KVY, P_KVZ = range(9, 14)
P_KPX, P_KPY, P_KPZ, P_KIX, P_KIY, P_KIZ = range(14, 20)
P_G, P_RMIN, P_RMAX = range(20, 23)
N_PARAMS = 23


@dataclass(frozen=True)
class VehicleParams:
    mass: float
    inertia: tuple[float, float, float]
    arm_length: float
    torque_const: float
    f_max: float
    omega_motor_max: float
    k_mot: float
    k_mot_f: float
    drag: tuple[float, float, float]
    k_p: tuple[float, float, float]
    k_i: tuple[float, float, float]
    r_min: float = 0.05
    r_max: float = 0.95
    gravity: float = 9.81
    body_rate_max: float = 6.0
    thrust_coeff: float | None = field(default=None)

    def __post_init__(self):
        for name in _VECTOR_FIELDS:
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 3:
                raise ConfigError(f"{name} must have 3 components, got {len(value)}")
            object.__setattr__(self, name, value)
        if self.thrust_coeff is None:
            object.__setattr__(self, "thrust_coeff", self.f_max / self.omega_motor_max**2)
        self._validate()

    def _validate(self):
        positive = {
            "mass": self.mass,
            "arm_length": self.arm_length,
            "f_max": self.f_max,
            "omega_motor_max": self.omega_motor_max,
            "k_mot": self.k_mot,
            "k_mot_f": self.k_mot_f,
            "body_rate_max": self.body_rate_max,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{name} must be > 0, got {value}")
        if min(self.inertia) <= 0:
            raise ConfigError(f"inertia components must be > 0, got {self.inertia}")
        if not 0.0 <= self.r_min < self.r_max <= 1.0:
            raise ConfigError(f"need 0 <= r_min < r_max <= 1, got {self.r_min}, {self.r_max}")
        implied = self.thrust_coeff * self.omega_motor_max**2
        if abs(implied - self.f_max) > 1e-9 * self.f_max:
            raise ConfigError(
                f"thrust_coeff * omega_motor_max^2 = {implied} does not equal f_max = {self.f_max}"
            )

    @property
    def weight(self) -> float:
        return self.mass * self.gravity

    @property
    def hover_throttle(self) -> float:
        """Per-motor normalized speed holding the vehicle in hover."""
        return float(np.sqrt(self.weight / (4.0 * self.f_max)))

    def to_array(self) -> np.ndarray:
        p = np.empty(N_PARAMS)
        p[P_MASS] = self.mass
        p[P_JX : P_JZ + 1] = self.inertia
        p[P_ARM] = self.arm_length
        p[P_KAPPA] = self.torque_const
        p[P_CF] = self.thrust_coeff
        p[P_FMAX] = self.f_max
        p[P_OMAX] = self.omega_motor_max
        p[P_KMOT] = self.k_mot
        p[P_KMOTF] = self.k_mot_f
        p[P_KVX : P_KVZ + 1] = self.drag
        p[P_KPX : P_KPZ + 1] = self.k_p
        p[P_KIX : P_KIZ + 1] = self.k_i
        p[P_G] = self.gravity
        p[P_RMIN] = self.r_min
        p[P_RMAX] = self.r_max
        return p

    def replace(self, **changes) -> "VehicleParams":
        if "f_max" in changes or "omega_motor_max" in changes:
            changes.setdefault("thrust_coeff", None)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "VehicleParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown vehicle fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_vehicle(path: str | Path | None = None) -> VehicleParams:
    """Read vehicle parameters from JSON; ``None`` loads the shipped defaults."""
    if path is None:
        text = resources.files("lolnmpc").joinpath("data/default_vehicle.json").read_text()
        source = "<default vehicle>"
    else:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"vehicle file not found: {path}")
        text = path.read_text()
        source = str(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return VehicleParams.from_dict(data)


def save_vehicle(params: VehicleParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2) + "\n")


def default_params() -> VehicleParams:
    return load_vehicle(None)
