"""Ground-truth quadcopter simulator.

State layout (8,): ``[r_x, r_y, r_z, v_x, v_y, v_z, roll, pitch]`` in a
world frame with z up; gravity acts along -z and hover thrust equals
``m * g``.  Inputs ``[p, q, T]`` are roll rate, pitch rate and thrust, held
constant between controller updates.  The unmodeled force is quadratic
body-frame drag against the local wind plus additive Gaussian noise, sampled
once per inner step and held across the RK4 stages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, SimulationAbort

STATE_DIM = 8
ATTITUDE_LIMIT = np.pi / 2


@dataclass(frozen=True)
class InputBounds:
    rate_max: float = 4.0  # |p|, |q| bound, rad/s
    thrust_min: float = 0.0
    thrust_max: float = 2.0 * 1.0 * 9.81  # 2*m*g for the default mass

    def clip(self, u: np.ndarray) -> np.ndarray:
        return np.array(
            [
                np.clip(u[0], -self.rate_max, self.rate_max),
                np.clip(u[1], -self.rate_max, self.rate_max),
                np.clip(u[2], self.thrust_min, self.thrust_max),
            ]
        )

    def check(self, u: np.ndarray, tol: float = 1e-9) -> None:
        if (
            abs(u[0]) > self.rate_max + tol
            or abs(u[1]) > self.rate_max + tol
            or u[2] < self.thrust_min - tol
            or u[2] > self.thrust_max + tol
        ):
            raise ConfigError(f"control input {u} outside bounds {self}")


@dataclass(frozen=True)
class WindDragConfig:
    mass: float = 1.0
    gravity: float = 9.81
    drag_diag: tuple[float, float, float] = (0.3, 0.3, 0.6)
    noise_sigma: tuple[float, float, float] = (0.2, 0.2, 0.1)
    wind_scale: float = 1.0  # 0 disables wind
    wind_time_offset: float = 0.0  # phase shift, re-randomized per episode

    def __post_init__(self) -> None:
        if self.mass <= 0:
            raise ConfigError(f"mass must be positive, got {self.mass}")
        if any(d < 0 for d in self.drag_diag):
            raise ConfigError(f"drag_diag must be nonnegative, got {self.drag_diag}")
        if any(s < 0 for s in self.noise_sigma):
            raise ConfigError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")

    def wind(self, r: np.ndarray, t: float) -> np.ndarray:
        return self.wind_scale * wind_velocity(r, t + self.wind_time_offset)


def pack_state(r, v, roll: float, pitch: float) -> np.ndarray:
    return np.concatenate([np.asarray(r, float), np.asarray(v, float), [roll, pitch]])


def wind_velocity(r: np.ndarray, t: float) -> np.ndarray:
    """Time-varying, spatially dependent wind field."""
    return np.array(
        [
            2.0 * np.sin(0.5 * t) + np.sin(2.0 * t) + 0.5 * r[0],
            2.4 * np.cos(0.4 * t) + 1.2 * np.cos(1.8 * t) + 0.5 * r[1],
            np.sin(0.3 * t) + 0.2 * r[2],
        ]
    )


def rotation_body_to_world(roll: float, pitch: float) -> np.ndarray:
    """Body-to-world rotation, yaw fixed at zero.

    Composed so the body z axis maps to
    ``[sin(pitch), -cos(pitch) sin(roll), cos(pitch) cos(roll)]``, the thrust
    direction used in the velocity dynamics.
    """
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    r_roll = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    r_pitch = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    return r_roll @ r_pitch


def thrust_direction(roll: float, pitch: float) -> np.ndarray:
    return np.array(
        [np.sin(pitch), -np.cos(pitch) * np.sin(roll), np.cos(pitch) * np.cos(roll)]
    )


def true_disturbance(
    x: np.ndarray, t: float, config: WindDragConfig, noise: np.ndarray
) -> np.ndarray:
    """Unmodeled aerodynamic force (N): body-frame quadratic drag plus noise."""
    rot = rotation_body_to_world(x[6], x[7])
    v_rel = x[3:6] - config.wind(x[0:3], t)
    v_body = rot.T @ v_rel
    drag = np.asarray(config.drag_diag) * v_body * np.linalg.norm(v_body)
    return -config.mass * (rot @ drag) + noise


def nominal_derivative(x: np.ndarray, u: np.ndarray, config: WindDragConfig) -> np.ndarray:
    """Known part of the dynamics: kinematics, gravity and attitude-resolved thrust."""
    out = np.empty(STATE_DIM)
    out[0:3] = x[3:6]
    out[3:6] = thrust_direction(x[6], x[7]) * (u[2] / config.mass)
    out[5] -= config.gravity
    out[6] = u[0]
    out[7] = u[1]
    return out


def nominal_derivative_batch(
    states: np.ndarray, inputs: np.ndarray, config: WindDragConfig
) -> np.ndarray:
    """Vectorized nominal derivative for planner rollouts, shapes (B, 8)/(B, 3)."""
    roll, pitch = states[:, 6], states[:, 7]
    thrust_dir = np.stack(
        [np.sin(pitch), -np.cos(pitch) * np.sin(roll), np.cos(pitch) * np.cos(roll)], axis=1
    )
    out = np.empty_like(states)
    out[:, 0:3] = states[:, 3:6]
    out[:, 3:6] = thrust_dir * (inputs[:, 2] / config.mass)[:, None]
    out[:, 5] -= config.gravity
    out[:, 6] = inputs[:, 0]
    out[:, 7] = inputs[:, 1]
    return out


def true_derivative(
    x: np.ndarray, u: np.ndarray, t: float, config: WindDragConfig, noise: np.ndarray
) -> np.ndarray:
    dx = nominal_derivative(x, u, config)
    dx[3:6] += true_disturbance(x, t, config, noise) / config.mass
    return dx


ResidualFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StepSample:
    """Midpoint diagnostics logged with every inner step."""

    t_mid: float
    wind_mid: np.ndarray
    delta_v_mid: np.ndarray  # unmodeled force at the midpoint, N
    d_true: np.ndarray  # lumped residual state derivative, (8,)
    d_norm: float


def step(
    x: np.ndarray,
    u: np.ndarray,
    t: float,
    h: float,
    config: WindDragConfig,
    noise: np.ndarray | None = None,
    predict_residual: ResidualFn | None = None,
    bounds: InputBounds | None = None,
) -> tuple[np.ndarray, StepSample]:
    """One classical RK4 step with held input and held noise.

    Also returns the simulation-truth lumped residual (true disturbance
    acceleration minus the model's prediction, zero elsewhere) evaluated at
    the step midpoint, which is what the coverage accounting compares
    against the calibrated margins.
    """
    if h <= 0:
        raise ConfigError(f"step size must be positive, got {h}")
    if bounds is not None:
        bounds.check(u)
    if noise is None:
        noise = np.zeros(3)

    k1 = true_derivative(x, u, t, config, noise)
    k2 = true_derivative(x + 0.5 * h * k1, u, t + 0.5 * h, config, noise)
    k3 = true_derivative(x + 0.5 * h * k2, u, t + 0.5 * h, config, noise)
    k4 = true_derivative(x + h * k3, u, t + h, config, noise)
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if abs(x_next[6]) >= ATTITUDE_LIMIT or abs(x_next[7]) >= ATTITUDE_LIMIT:
        raise SimulationAbort(
            f"attitude left validity envelope at t={t + h:.3f}s: "
            f"roll={x_next[6]:.3f}, pitch={x_next[7]:.3f}"
        )

    t_mid = t + 0.5 * h
    x_mid = 0.5 * (x + x_next)
    delta_v = true_disturbance(x_mid, t_mid, config, noise)
    residual_acc = delta_v / config.mass
    if predict_residual is not None:
        xi = np.concatenate([x_mid[3:6], x_mid[6:8]])
        residual_acc = residual_acc - predict_residual(xi)
    d_true = np.zeros(STATE_DIM)
    d_true[3:6] = residual_acc
    return x_next, StepSample(
        t_mid=t_mid,
        wind_mid=config.wind(x_mid[0:3], t_mid),
        delta_v_mid=delta_v,
        d_true=d_true,
        d_norm=float(np.linalg.norm(residual_acc)),
    )
