"""Two-car uncontrolled-intersection game.

Each player drives along its own road with state ``(d, v)`` and acceleration
control ``u``. Joint states are ordered ``(d1, v1, d2, v2)``; when time is
attached it is appended as a fifth coordinate. Players are indexed 0 and 1.

Rewards are maximized. The Hamiltonian uses ``H_i = lam_i . f + l_i`` so it is
strictly concave in the player's own control and the maximizer is the clamped
interior point ``lam_v / 2``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml
from scipy.special import expit


class PlayerType(enum.Enum):
    AGGRESSIVE = 1
    NON_AGGRESSIVE = 5

    @property
    def theta(self) -> float:
        return float(self.value)

    @property
    def tag(self) -> str:
        return "a" if self is PlayerType.AGGRESSIVE else "na"

    @classmethod
    def from_tag(cls, tag: str) -> "PlayerType":
        tag = tag.strip().lower()
        if tag in ("a", "aggressive"):
            return cls.AGGRESSIVE
        if tag in ("na", "non_aggressive", "nonaggressive"):
            return cls.NON_AGGRESSIVE
        raise ValueError(f"unknown player type {tag!r}")


A = PlayerType.AGGRESSIVE
NA = PlayerType.NON_AGGRESSIVE


class TypeConfig(NamedTuple):
    theta1: PlayerType
    theta2: PlayerType

    @property
    def tag(self) -> str:
        return f"{self.theta1.tag},{self.theta2.tag}"

    @property
    def thetas(self) -> tuple[float, float]:
        return (self.theta1.theta, self.theta2.theta)

    def swapped(self) -> "TypeConfig":
        return TypeConfig(self.theta2, self.theta1)

    @classmethod
    def parse(cls, text: str) -> "TypeConfig":
        parts = text.replace("(", "").replace(")", "").split(",")
        if len(parts) != 2:
            raise ValueError(f"type config must look like 'a,na', got {text!r}")
        return cls(PlayerType.from_tag(parts[0]), PlayerType.from_tag(parts[1]))


ALL_CONFIGS = (TypeConfig(A, A), TypeConfig(A, NA), TypeConfig(NA, A), TypeConfig(NA, NA))


class JointState(NamedTuple):
    d1: float
    v1: float
    d2: float
    v2: float
    t: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


@dataclass(frozen=True)
class GameGeometry:
    road_length: float = 70.0
    car_length: float = 3.0
    car_width: float = 1.5
    collision_penalty: float = 1.0e4
    terminal_position_weight: float = 1.0e-6
    nominal_speed: float = 18.0
    horizon: float = 3.0
    u_min: float = -5.0
    u_max: float = 10.0
    softening_sharpness: float = 5.0

    def __post_init__(self):
        for name in ("road_length", "car_length", "car_width", "softening_sharpness", "horizon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be below u_max")

    @classmethod
    def from_dict(cls, data: dict) -> "GameGeometry":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown geometry keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    @classmethod
    def from_file(cls, path) -> "GameGeometry":
        return cls.from_dict(load_config(path).get("game", {}))

    def to_dict(self) -> dict:
        return asdict(self)

    def collision_interval(self, theta: float) -> tuple[float, float]:
        lo = self.road_length / 2 - theta * self.car_width / 2
        hi = (self.road_length + self.car_width) / 2 + self.car_length
        return lo, hi


def load_config(path) -> dict:
    """Read a YAML (or JSON) experiment config into a plain dict."""
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        return json.loads(text)
    data = yaml.safe_load(text)
    return data or {}


def _theta(theta) -> float:
    return theta.theta if isinstance(theta, PlayerType) else float(theta)


def dynamics(state, u1, u2) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    u1 = np.broadcast_to(np.asarray(u1, dtype=float), state.shape[:-1])
    u2 = np.broadcast_to(np.asarray(u2, dtype=float), state.shape[:-1])
    return np.stack([state[..., 1], u1, state[..., 3], u2], axis=-1)


def collision_indicator(d, theta, geom: GameGeometry):
    lo, hi = geom.collision_interval(_theta(theta))
    d = np.asarray(d, dtype=float)
    out = ((d >= lo) & (d <= hi)).astype(float)
    return out if out.ndim else float(out)


def soft_collision_indicator(d, theta, geom: GameGeometry, gamma: float | None = None):
    gamma = geom.softening_sharpness if gamma is None else gamma
    lo, hi = geom.collision_interval(_theta(theta))
    d = np.asarray(d, dtype=float)
    out = expit(gamma * (d - lo)) * expit(gamma * (hi - d))
    return out if out.ndim else float(out)


def penalty_product(state, i: int, theta_i, geom: GameGeometry, softened: bool = False):
    """``sigma(d_i, theta_i) * sigma(d_other, 1)`` for player ``i``."""
    state = np.asarray(state, dtype=float)
    ind = soft_collision_indicator if softened else collision_indicator
    d_own, d_other = state[..., 2 * i], state[..., 2 * (1 - i)]
    return ind(d_own, theta_i, geom) * ind(d_other, 1.0, geom)


def running_reward(state, u_i, i: int, theta_i, geom: GameGeometry, softened: bool = False):
    u_i = np.asarray(u_i, dtype=float)
    return -u_i**2 - geom.collision_penalty * penalty_product(state, i, theta_i, geom, softened)


def terminal_reward(state, i: int, geom: GameGeometry):
    state = np.asarray(state, dtype=float)
    d, v = state[..., 2 * i], state[..., 2 * i + 1]
    return geom.terminal_position_weight * d - (v - geom.nominal_speed) ** 2


def terminal_costate(state, i: int, geom: GameGeometry) -> np.ndarray:
    """Gradient of player ``i``'s terminal reward over the joint state."""
    state = np.asarray(state, dtype=float)
    lam = np.zeros(state.shape[:-1] + (4,))
    lam[..., 2 * i] = geom.terminal_position_weight
    lam[..., 2 * i + 1] = -2.0 * (state[..., 2 * i + 1] - geom.nominal_speed)
    return lam


def hamiltonian(state, lam_i, u_i, u_other, i: int, theta_i, geom: GameGeometry, softened: bool = False):
    lam_i = np.asarray(lam_i, dtype=float)
    u1, u2 = (u_i, u_other) if i == 0 else (u_other, u_i)
    f = dynamics(state, u1, u2)
    return np.sum(lam_i * f, axis=-1) + running_reward(state, u_i, i, theta_i, geom, softened)


def optimal_control(lam_v, geom: GameGeometry):
    out = np.clip(np.asarray(lam_v, dtype=float) / 2.0, geom.u_min, geom.u_max)
    return out if out.ndim else float(out)
