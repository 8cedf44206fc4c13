"""Sampling-based nominal tube MPC with margin-driven constraint tightening.

The planner runs a cross-entropy search over input sequences, rolls out the
nominal model (known dynamics plus the frozen residual predictor) and scores
candidates against obstacle/altitude constraints tightened by a tube radius.
The tube follows a first-order contraction recursion driven by the current
disturbance margin; its fixed point ``d_bar / contraction`` grows with the
margin, so conservative margins close the corridor and tight ones open it.

Unit bridging: the margin bounds a residual *acceleration*, while obstacle
clearances are positions.  The contraction recursion is run in acceleration
units and the result divided once more by the contraction rate to obtain the
position tube; this heuristic mapping is validated empirically by the tube
telemetry the harness reports, not proved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import mlp_apply, unpack
from .plant import InputBounds, WindDragConfig, nominal_derivative_batch


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ConfigError(f"obstacle radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Scenario:
    """Goal-navigation scene: start/goal, spherical obstacles, altitude band.

    The default corridor pair leaves a gap straddling the straight line from
    start to goal; the transverse obstacle placement is a configuration
    choice recorded in the shipped scenario file.
    """

    start: tuple[float, float, float] = (-2.0, 0.0, 1.0)
    goal: tuple[float, float, float] = (7.0, 0.0, 1.0)
    duration: float = 5.0
    obstacles: tuple[Obstacle, ...] = (
        Obstacle(center=(3.0, 1.0, 1.0), radius=0.7),
        Obstacle(center=(3.0, -0.65, 1.0), radius=0.3),
        Obstacle(center=(5.5, 0.6, 1.0), radius=0.4),
    )
    altitude_min: float = 0.8
    altitude_max: float = 1.2
    vehicle_radius: float = 0.1
    goal_radius: float = 0.3

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.altitude_min >= self.altitude_max:
            raise ConfigError("altitude band is empty")
        goal = np.asarray(self.goal)
        for obs in self.obstacles:
            if np.linalg.norm(goal - np.asarray(obs.center)) <= obs.radius + self.vehicle_radius:
                raise ConfigError(f"goal lies inside obstacle {obs}")
        gap = self.corridor_gap()
        if gap is not None and gap <= 2.0 * self.vehicle_radius:
            raise ConfigError(f"corridor gap {gap:.3f} m does not clear the vehicle")

    def corridor_gap(self) -> float | None:
        """Surface-to-surface gap of the closest obstacle pair, if any."""
        if len(self.obstacles) < 2:
            return None
        gaps = []
        for i, a in enumerate(self.obstacles):
            for b in self.obstacles[i + 1 :]:
                dist = float(np.linalg.norm(np.asarray(a.center) - np.asarray(b.center)))
                gaps.append(dist - a.radius - b.radius)
        return min(gaps)

    def clearance(self, positions: np.ndarray) -> np.ndarray:
        """Distance to the nearest obstacle surface minus the vehicle radius.

        ``positions`` is (..., 3); negative values mean collision.
        """
        pos = np.asarray(positions, dtype=float)
        best = np.full(pos.shape[:-1], np.inf)
        for obs in self.obstacles:
            dist = np.linalg.norm(pos - np.asarray(obs.center), axis=-1) - obs.radius
            best = np.minimum(best, dist)
        return best - self.vehicle_radius


def default_feedback_gain() -> np.ndarray:
    """Ancillary gain (rows p, q, T against the 8-dim tracking error x - x_ref).

    Signs follow the thrust geometry: positive roll pushes -y, positive
    pitch pushes +x, thrust acts on +z.
    """
    gain = np.zeros((3, 8))
    gain[0, 1] = 1.5  # p from y error
    gain[0, 4] = 1.0  # p from vy error
    gain[0, 6] = -2.0  # roll damping
    gain[1, 0] = -1.5  # q from x error
    gain[1, 3] = -1.0  # q from vx error
    gain[1, 7] = -2.0  # pitch damping
    gain[2, 2] = -6.0  # T from z error
    gain[2, 5] = -3.0  # T from vz error
    return gain


@dataclass(frozen=True)
class ControllerConfig:
    contraction: float = 4.0  # tube contraction rate, 1/s
    horizon_steps: int = 10
    dt: float = 0.05
    population: int = 256
    elites: int = 32
    iterations: int = 5
    init_std: tuple[float, float, float] = (1.5, 1.5, 3.0)
    goal_weight: float = 1.0
    effort_weight: float = 1e-3
    velocity_weight: float = 0.02  # discourages excess speed (drag grows quadratically)
    terminal_weight: float = 10.0
    terminal_velocity_weight: float = 1.0  # arrive ready to hover
    speed_limit: float = 3.0  # m/s, soft operational envelope
    speed_penalty: float = 50.0
    violation_penalty: float = 1e6
    attitude_limit: float = 0.6  # rad, keeps rollouts far from the simulator abort envelope
    bounds: InputBounds = field(default_factory=InputBounds)
    feedback_gain: np.ndarray = field(default_factory=default_feedback_gain)

    def __post_init__(self) -> None:
        if self.contraction <= 0:
            raise ConfigError("contraction rate must be positive")
        if not self.population > self.elites >= 1:
            raise ConfigError("need population > elites >= 1")
        if self.horizon_steps < 1 or self.dt <= 0:
            raise ConfigError("horizon_steps >= 1 and dt > 0 required")
        gain = np.asarray(self.feedback_gain, dtype=float)
        if gain.shape != (3, 8):
            raise ConfigError(f"feedback_gain must be (3, 8), got {gain.shape}")
        object.__setattr__(self, "feedback_gain", gain)


def tube_propagate(
    phi0: float, d_bar: float, contraction: float, dt: float, steps: int
) -> np.ndarray:
    """First-order tube recursion ``phi' = -contraction*phi + d_bar``.

    Explicit Euler over ``steps`` intervals; monotone in ``d_bar`` with fixed
    point ``d_bar / contraction``.
    """
    phi = np.empty(steps + 1)
    phi[0] = phi0
    for i in range(steps):
        phi[i + 1] = phi[i] + dt * (-contraction * phi[i] + d_bar)
    return phi


@dataclass
class TubePlan:
    states: np.ndarray  # nominal rollout, (P+1, 8)
    inputs: np.ndarray  # (P, 3)
    tube: np.ndarray  # acceleration-unit tube radii, (P+1,)
    tube_pos: np.ndarray  # position-unit tube radii, (P+1,)
    feasible: bool
    cost: float

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]


def hover_input(config: WindDragConfig) -> np.ndarray:
    return np.array([0.0, 0.0, config.mass * config.gravity])


class CemPlanner:
    """Cross-entropy planner over input sequences; deterministic per seed."""

    def __init__(
        self,
        scenario: Scenario,
        config: ControllerConfig,
        plant_config: WindDragConfig,
        seed: int = 0,
    ):
        self.scenario = scenario
        self.config = config
        self.plant_config = plant_config
        self.rng = np.random.default_rng(seed)
        self._mean = np.tile(hover_input(plant_config), (config.horizon_steps, 1))

    def _rollout(self, x0: np.ndarray, sequences: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Batched RK4 rollout of the nominal model, returns (B, P+1, 8)."""
        pop, steps, _ = sequences.shape
        states = np.empty((pop, steps + 1, 8))
        states[:, 0] = x0
        dt = self.config.dt
        layers = [(w.copy(), b.copy()) for w, b in unpack(theta)]  # snapshot once

        def deriv(xs: np.ndarray, us: np.ndarray) -> np.ndarray:
            dx = nominal_derivative_batch(xs, us, self.plant_config)
            dx[:, 3:6] += mlp_apply(layers, xs[:, 3:8])
            return dx

        x = states[:, 0]
        for i in range(steps):
            u = sequences[:, i]
            k1 = deriv(x, u)
            k2 = deriv(x + 0.5 * dt * k1, u)
            k3 = deriv(x + 0.5 * dt * k2, u)
            k4 = deriv(x + dt * k3, u)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            states[:, i + 1] = x
        return states

    def _violations(self, states: np.ndarray, tube_pos: np.ndarray) -> np.ndarray:
        """Total tightened-constraint violation per rollout (B,). Zero = safe."""
        pos = states[:, 1:, 0:3]
        margin = tube_pos[None, 1:]
        clearance = self.scenario.clearance(pos)
        obstacle_violation = np.maximum(margin - clearance, 0.0).sum(axis=1)
        alt = pos[:, :, 2]
        low = np.maximum(self.scenario.altitude_min + margin - alt, 0.0).sum(axis=1)
        high = np.maximum(alt - (self.scenario.altitude_max - margin), 0.0).sum(axis=1)
        attitude = np.maximum(
            np.abs(states[:, 1:, 6:8]) - self.config.attitude_limit, 0.0
        ).sum(axis=(1, 2))
        return obstacle_violation + low + high + attitude

    def _cost(self, states: np.ndarray, sequences: np.ndarray, tube_pos: np.ndarray) -> np.ndarray:
        cfg = self.config
        goal = np.asarray(self.scenario.goal)
        dist = np.linalg.norm(states[:, 1:, 0:3] - goal, axis=2)
        effort = np.sum((sequences - hover_input(self.plant_config)) ** 2, axis=(1, 2))
        vel_sq = np.sum(states[:, 1:, 3:6] ** 2, axis=2)
        over_speed = np.maximum(np.sqrt(vel_sq) - cfg.speed_limit, 0.0)
        cost = cfg.goal_weight * dist.sum(axis=1) + cfg.terminal_weight * dist[:, -1]
        cost += cfg.effort_weight * effort
        cost += cfg.velocity_weight * vel_sq.sum(axis=1)
        cost += cfg.terminal_velocity_weight * vel_sq[:, -1]
        cost += cfg.speed_penalty * np.sum(over_speed**2, axis=1)
        cost += cfg.violation_penalty * self._violations(states, tube_pos)
        return cost

    def _clip(self, sequences: np.ndarray) -> np.ndarray:
        b = self.config.bounds
        sequences[..., 0] = np.clip(sequences[..., 0], -b.rate_max, b.rate_max)
        sequences[..., 1] = np.clip(sequences[..., 1], -b.rate_max, b.rate_max)
        sequences[..., 2] = np.clip(sequences[..., 2], b.thrust_min, b.thrust_max)
        return sequences

    def plan(self, x: np.ndarray, theta: np.ndarray, d_bar: float, phi0: float = 0.0) -> TubePlan:
        """Plan from state ``x`` with the model snapshot ``theta`` frozen.

        ``phi0`` seeds the tube with the realized tracking error.  The plan
        is the rollout of the final elite mean; it is feasible iff that
        rollout violates no tightened constraint.
        """
        if d_bar < 0:
            raise ConfigError(f"d_bar must be >= 0, got {d_bar}")
        cfg = self.config
        tube = tube_propagate(phi0, d_bar, cfg.contraction, cfg.dt, cfg.horizon_steps)
        tube_pos = tube / cfg.contraction

        mean = self._mean.copy()
        std = np.tile(np.asarray(cfg.init_std), (cfg.horizon_steps, 1))
        for _ in range(cfg.iterations):
            draws = self.rng.normal(size=(cfg.population, cfg.horizon_steps, 3))
            candidates = self._clip(mean[None] + std[None] * draws)
            candidates[0] = mean  # keep the incumbent in the pool
            states = self._rollout(x, candidates, theta)
            costs = self._cost(states, candidates, tube_pos)
            elite_idx = np.argsort(costs, kind="stable")[: cfg.elites]
            elite = candidates[elite_idx]
            mean = elite.mean(axis=0)
            std = elite.std(axis=0) + 1e-3

        final_seq = self._clip(mean[None].copy())
        final_states = self._rollout(x, final_seq, theta)
        violation = float(self._violations(final_states, tube_pos)[0])
        cost = float(self._cost(final_states, final_seq, tube_pos)[0])

        # Warm start for the next call: shift one step, repeat the tail.
        self._mean = np.vstack([mean[1:], mean[-1:]])

        return TubePlan(
            states=final_states[0],
            inputs=final_seq[0],
            tube=tube,
            tube_pos=tube_pos,
            feasible=violation == 0.0,
            cost=cost,
        )

    def reset_warm_start(self) -> None:
        self._mean = np.tile(hover_input(self.plant_config), (self.config.horizon_steps, 1))


def ancillary_control(
    x: np.ndarray, plan: TubePlan, config: ControllerConfig, index: int = 0
) -> np.ndarray:
    """Tracking law ``u = u_ref + K (x - x_ref)`` clipped to the input box.

    The gain matrix carries the negative-feedback signs.  ``index`` selects
    where along the plan we are executing (nonzero while holding a stale
    plan's tail after an infeasible solve).
    """
    index = min(index, plan.horizon - 1)
    u_ref = plan.inputs[index]
    x_ref = plan.states[index]
    error = x - x_ref
    u = u_ref + config.feedback_gain @ error
    return config.bounds.clip(u)
