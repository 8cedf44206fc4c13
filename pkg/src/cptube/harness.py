"""Episode orchestration: simulate, adapt, calibrate, plan, log, score.

One controller step at 20 Hz does, in order: close the rolling window and
update the active conformal thread with its delayed label, convert the new
threshold to a disturbance margin, plan with tube-tightened constraints,
apply the ancillary input, then advance the plant through the inner
simulation steps with model adaptation at the inner rate.

Coverage is settled retrospectively: the threshold issued at step ``k`` is
judged against the integral score that arrives ``P`` steps later, and the
margin is judged against the realized disturbance supremum over the window
it promised to bound.  All randomness flows from the run seed through named
substreams, so identical configurations replay byte-for-byte.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field, replace
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from .conformal import (
    MarginCase,
    OcpConfig,
    ThreadBank,
    initial_margin,
    margin_from_threshold,
)
from .controller import (
    CemPlanner,
    ControllerConfig,
    Obstacle,
    Scenario,
    TubePlan,
    ancillary_control,
    hover_input,
)
from .errors import ConfigError
from .history import HistoryStack
from .model import AdaptConfig, AdaptiveModel, adapt_step, load_checkpoint, mlp_forward, residual_eps_acc
from .plant import WindDragConfig, nominal_derivative, pack_state, step as plant_step

TRAJECTORY_COLUMNS = [
    "episode", "t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "roll", "pitch",
    "u_p", "u_q", "u_T", "theta_norm", "d_true_norm", "wind_x", "wind_y", "wind_z",
]
CONFORMAL_COLUMNS = [
    "episode", "k", "k_local", "j", "score", "q_active", "d_bar", "case",
    "feasible", "fallback", "tube_pos_max", "sup_d_true", "covered_point", "covered_score",
]


@dataclass(frozen=True)
class RunConfig:
    ocp: OcpConfig = field(default_factory=OcpConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    plant: WindDragConfig = field(default_factory=WindDragConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    scenario: Scenario = field(default_factory=Scenario)
    seed: int = 0
    adaptation: bool = True
    episodes: int = 1
    grid_dt: float = 0.01
    theta_init: str = "random"  # "random" | "zeros" | "pretrained" | checkpoint path
    theta_scale: float = 0.1
    randomize_wind_per_episode: bool = True  # fresh wind phase for episodes > 0

    def __post_init__(self) -> None:
        if abs(self.ocp.dt - self.controller.dt) > 1e-12:
            raise ConfigError(
                f"calibration dt {self.ocp.dt} != controller dt {self.controller.dt}"
            )
        if self.ocp.threads != self.controller.horizon_steps:
            raise ConfigError(
                f"thread count {self.ocp.threads} != planner horizon {self.controller.horizon_steps}"
            )
        ratio = self.ocp.dt / self.grid_dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError(
                f"controller dt ({self.ocp.dt}) must be an integer multiple of grid_dt ({self.grid_dt})"
            )
        if abs(self.adapt.dt - self.grid_dt) > 1e-12:
            raise ConfigError(
                f"adaptation dt {self.adapt.dt} != grid_dt {self.grid_dt}"
            )
        steps = self.scenario.duration / self.ocp.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("scenario duration must be a multiple of the controller dt")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")

    @property
    def steps_per_episode(self) -> int:
        return int(round(self.scenario.duration / self.ocp.dt))

    @property
    def inner_per_step(self) -> int:
        return int(round(self.ocp.dt / self.grid_dt))

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        def build(section: str, factory):
            data = dict(payload.get(section, {}))
            return factory(**data)

        scenario_data = dict(payload.get("scenario", {}))
        if "obstacles" in scenario_data:
            scenario_data["obstacles"] = tuple(
                Obstacle(center=tuple(o["center"]), radius=float(o["radius"]))
                for o in scenario_data["obstacles"]
            )
        controller_data = dict(payload.get("controller", {}))
        if "feedback_gain" in controller_data:
            controller_data["feedback_gain"] = np.asarray(controller_data["feedback_gain"], float)
        if "bounds" in controller_data:
            from .plant import InputBounds

            controller_data["bounds"] = InputBounds(**controller_data["bounds"])
        if "init_std" in controller_data:
            controller_data["init_std"] = tuple(controller_data["init_std"])
        plant_data = dict(payload.get("plant", {}))
        for key in ("drag_diag", "noise_sigma"):
            if key in plant_data:
                plant_data[key] = tuple(plant_data[key])
        for key in ("start", "goal"):
            if key in scenario_data:
                scenario_data[key] = tuple(scenario_data[key])

        top = {
            key: payload[key]
            for key in (
                "seed", "adaptation", "episodes", "grid_dt",
                "theta_init", "theta_scale", "randomize_wind_per_episode",
            )
            if key in payload
        }
        try:
            return cls(
                ocp=build("ocp", OcpConfig),
                adapt=build("adapt", AdaptConfig),
                plant=WindDragConfig(**plant_data),
                controller=ControllerConfig(**controller_data),
                scenario=Scenario(**scenario_data),
                **top,
            )
        except TypeError as exc:  # unknown field names in the file
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(payload)


@dataclass
class RunMetrics:
    coverage_pointwise: float
    coverage_pointwise_calibrated: float
    coverage_score: float
    score_updates: int
    labeled_updates: int
    mean_d_bar: float
    max_d_bar: float
    mean_score: float
    mean_tube_pos: float
    constraint_violations: int
    safe_fraction: float
    goal_reached: bool
    goal_reach_fraction: float
    infeasible_plans: int
    fallback_steps: int
    tube_breach_rate: float
    miss_rate: float
    breach_while_covered_rate: float
    d_rate_max_smoothed: float
    d_rate_p99_smoothed: float
    d_lipschitz_configured: float
    d_lipschitz_exceeded: bool
    model_lipschitz: float
    episodes: int
    steps: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class _StepRecord:
    episode: int
    k: int
    k_local: int
    thread: int
    score: float
    q_active: float
    d_bar: float
    case: str
    feasible: bool
    fallback: bool
    plan_pos: np.ndarray | None
    tube_pos: np.ndarray | None
    tube_pos_max: float = math.nan  # governing plan's worst position tube
    sup_d: float = math.nan
    covered_point: float = math.nan
    covered_score: float = math.nan


def make_f_nom(plant_config: WindDragConfig):
    """Online-computable dynamics: known part plus the learned residual."""

    def f_nom(x: np.ndarray, u: np.ndarray, theta: np.ndarray) -> np.ndarray:
        dx = nominal_derivative(x, u, plant_config)
        xi = np.concatenate([x[3:6], x[6:8]])
        dx[3:6] += mlp_forward(theta, xi)
        return dx

    return f_nom


def _random_model(config: RunConfig) -> AdaptiveModel:
    # Substream [seed, 1] so the plant noise stream is unaffected.
    theta0_rng = np.random.default_rng([config.seed, 1])
    from .model import init_theta

    theta0 = init_theta(theta0_rng, scale=config.theta_scale)
    return AdaptiveModel(theta=theta0.copy(), theta_prior=theta0.copy())


PRIOR_EPOCHS = 20


def collect_pretrain_log(config: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Hover-drift through the disturbance field with the model frozen at
    zero, logging model inputs and the full residual accelerations."""
    from .model import PARAM_COUNT

    f_nom_zero = make_f_nom(config.plant)
    zero_theta = np.zeros(PARAM_COUNT)
    rng = np.random.default_rng([config.seed, 4])
    sigma = np.asarray(config.plant.noise_sigma)
    steps = int(round(config.scenario.duration / config.grid_dt))
    u = hover_input(config.plant)
    x = pack_state(config.scenario.start, np.zeros(3), 0.0, 0.0)
    t = 0.0
    xis, targets = [], []
    for _ in range(steps):
        noise = rng.normal(size=3) * sigma
        vdot_nom = f_nom_zero(x, u, zero_theta)[3:6]
        v_prev = x[3:6].copy()
        xi = np.concatenate([x[3:6], x[6:8]])
        x, _sample = plant_step(x, u, t, config.grid_dt, config.plant, noise=noise)
        t += config.grid_dt
        eps = residual_eps_acc(x[3:6], v_prev, config.grid_dt, vdot_nom)
        xis.append(xi)
        targets.append(eps)
    return np.asarray(xis), np.asarray(targets)


def _mean_fit_error(model: AdaptiveModel, xis: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(mlp_forward(model.theta, xis) - targets, axis=1)))


def pretrain_prior(config: RunConfig) -> AdaptiveModel:
    """Offline prior fitted to a logged adaptation-off run.

    Gradient epochs of the online law over the log grow useful features
    (projection keeps the parameters in the norm ball); a least-squares fit
    of the output layer then polishes the result and is kept only if it
    improves the fit (on tiny random features its solution can exceed the
    ball and be crushed by the projection).  Data comes from the scenario's
    own wind phase: the start regime is not identifiable from the model
    inputs, so pooling phases would only blur it.
    """
    from .model import fit_output_layer

    xis, targets = collect_pretrain_log(config)
    model = _random_model(config)
    adapt_cfg = AdaptConfig(gamma=config.adapt.gamma, lam=0.0, dt=config.grid_dt)
    shuffle_rng = np.random.default_rng([config.seed, 5])
    for _ in range(PRIOR_EPOCHS):
        # Shuffled replay: in time order the tracking law just follows the
        # tail of the log instead of fitting all of it.
        for i in shuffle_rng.permutation(len(xis)):
            adapt_step(model, xis[i], targets[i] - model.predict(xis[i]), adapt_cfg)

    best = model
    best_err = _mean_fit_error(model, xis, targets)
    for rcond in (1e-1, 1e-2, 1e-3):
        polished = fit_output_layer(model, xis, targets, rcond=rcond)
        err = _mean_fit_error(polished, xis, targets)
        if err < best_err:
            best, best_err = polished, err
    best.theta_prior = best.theta.copy()
    return best


def _init_model(config: RunConfig) -> AdaptiveModel:
    if config.theta_init == "zeros":
        return AdaptiveModel.zeros()
    if config.theta_init == "random":
        return _random_model(config)
    if config.theta_init == "pretrained":
        return pretrain_prior(config)
    return load_checkpoint(config.theta_init)


def _smoothed_rate(d_values: np.ndarray, grid_dt: float, window: int = 20) -> np.ndarray:
    """Norm of the finite-difference rate of the moving-average disturbance.

    White per-step noise is unbounded in rate; a moving average over
    ``window`` samples with the difference taken across one full window
    estimates the rate of the smooth component instead.
    """
    if d_values.shape[0] < 2 * window + 1:
        return np.zeros(0)
    kernel = np.ones(window) / window
    smooth = np.stack(
        [np.convolve(d_values[:, i], kernel, mode="valid") for i in range(d_values.shape[1])],
        axis=1,
    )
    span = window * grid_dt
    return np.linalg.norm(smooth[window:] - smooth[:-window], axis=1) / span


def estimate_model_lipschitz(theta: np.ndarray, seed: int = 0, pairs: int = 200) -> float:
    """Empirical Lipschitz constant of the residual predictor over its input box."""
    rng = np.random.default_rng(seed)
    lo = np.array([-5.0, -5.0, -5.0, -0.5, -0.5])
    hi = -lo
    a = rng.uniform(lo, hi, size=(pairs, 5))
    b = rng.uniform(lo, hi, size=(pairs, 5))
    fa = mlp_forward(theta, a)
    fb = mlp_forward(theta, b)
    num = np.linalg.norm(fa - fb, axis=1)
    den = np.linalg.norm(a - b, axis=1)
    return float(np.max(num / np.maximum(den, 1e-12)))


def run_episode(
    config: RunConfig, out_dir: str | Path | None = None, dump_residuals: bool = False
) -> RunMetrics:
    """Execute the full loop and return aggregate metrics.

    With ``out_dir`` set, also writes ``trajectory.csv``, ``conformal.csv``
    and ``metrics.json`` (plus ``residuals.csv`` on request).
    """
    noise_rng = np.random.default_rng([config.seed, 0])
    planner_rng = np.random.default_rng([config.seed, 2])
    wind_rng = np.random.default_rng([config.seed, 3])

    model = _init_model(config)
    bank = ThreadBank.from_config(config.ocp)
    history = HistoryStack(config.grid_dt, config.ocp.horizon)
    planner = CemPlanner(config.scenario, config.controller, config.plant, seed=planner_rng)
    f_nom = make_f_nom(config.plant)
    sigma = np.asarray(config.plant.noise_sigma)
    horizon_steps = config.controller.horizon_steps
    inner = config.inner_per_step
    steps_ep = config.steps_per_episode

    records: list[_StepRecord] = []
    traj_rows: list[list] = []
    residual_rows: list[list] = []
    d_norm_by_ep: list[list[float]] = []
    d_vec_by_ep: list[list[np.ndarray]] = []
    pos_by_ep: list[list[np.ndarray]] = []  # fine-grid positions incl. start
    tick_states_by_ep: list[list[np.ndarray]] = []
    goal = np.asarray(config.scenario.goal)
    goal_reached_eps = 0
    infeasible_plans = 0
    fallback_steps = 0

    global_k = 0
    for ep in range(config.episodes):
        if ep == 0 or not config.randomize_wind_per_episode:
            plant_cfg = config.plant
        else:
            plant_cfg = replace(config.plant, wind_time_offset=float(wind_rng.uniform(0.0, 1000.0)))
        x = pack_state(config.scenario.start, np.zeros(3), 0.0, 0.0)
        t = 0.0
        history.clear()
        planner.reset_warm_start()
        u0 = hover_input(config.plant)
        history.push(t, x, u0, model.theta.copy())

        d_norms: list[float] = []
        d_vecs: list[np.ndarray] = []
        positions: list[np.ndarray] = [x[0:3].copy()]
        tick_states: list[np.ndarray] = []
        active_plan: TubePlan | None = None
        plan_age = 0
        min_goal_dist = float(np.linalg.norm(x[0:3] - goal))

        for k_local in range(steps_ep):
            k = global_k
            tick_states.append(x.copy())
            if history.full:
                score_result = history.integral_score(f_nom)
                q_active = bank.update(k, score_result.value)
                margin = margin_from_threshold(q_active, config.ocp, step=k, thread=k % horizon_steps)
                score = score_result.value
                if dump_residuals:
                    ts_hist = history.arrays()[0]
                    for idx, row in enumerate(score_result.residual_cumsum):
                        residual_rows.append(
                            [ep, k, float(ts_hist[idx])] + [float(v) for v in row]
                        )
            else:
                margin = initial_margin(config.ocp, step=k)
                score = math.nan

            if active_plan is not None:
                ref_idx = min(plan_age + 1, active_plan.horizon)
                phi0 = float(np.linalg.norm(x[0:3] - active_plan.states[ref_idx, 0:3]))
            else:
                phi0 = 0.0
            plan = planner.plan(x, model.theta.copy(), margin.d_bar, phi0=phi0)

            fallback = False
            if plan.feasible:
                active_plan = plan
                plan_age = 0
                u = ancillary_control(x, active_plan, config.controller, index=0)
            else:
                infeasible_plans += 1
                if active_plan is not None and plan_age + 1 < active_plan.horizon:
                    plan_age += 1
                    u = ancillary_control(x, active_plan, config.controller, index=plan_age)
                else:
                    active_plan = None
                    plan_age = 0
                    fallback = True
                    fallback_steps += 1
                    u = hover_input(config.plant)

            records.append(
                _StepRecord(
                    episode=ep,
                    k=k,
                    k_local=k_local,
                    thread=k % horizon_steps,
                    score=score,
                    q_active=margin.q_active,
                    d_bar=margin.d_bar,
                    case=margin.case.value,
                    feasible=plan.feasible,
                    fallback=fallback,
                    plan_pos=plan.states[:, 0:3].copy() if plan.feasible else None,
                    tube_pos=plan.tube_pos.copy() if plan.feasible else None,
                    tube_pos_max=(
                        float(np.max(active_plan.tube_pos)) if active_plan is not None else math.nan
                    ),
                )
            )

            for _ in range(inner):
                noise = noise_rng.normal(size=3) * sigma
                vdot_nom = f_nom(x, u, model.theta)[3:6]
                v_prev = x[3:6].copy()
                xi_prev = np.concatenate([x[3:6], x[6:8]])
                x_next, sample = plant_step(
                    x, u, t, config.grid_dt, plant_cfg,
                    noise=noise,
                    predict_residual=lambda xi: mlp_forward(model.theta, xi),
                    bounds=config.controller.bounds,
                )
                if config.adaptation:
                    eps = residual_eps_acc(x_next[3:6], v_prev, config.grid_dt, vdot_nom)
                    adapt_step(model, xi_prev, eps, config.adapt)
                t += config.grid_dt
                x = x_next
                history.push(t, x, u, model.theta.copy())
                d_norms.append(sample.d_norm)
                d_vecs.append(sample.d_true[3:6].copy())
                positions.append(x[0:3].copy())
                min_goal_dist = min(min_goal_dist, float(np.linalg.norm(x[0:3] - goal)))
                traj_rows.append(
                    [ep, t] + list(x) + list(u)
                    + [float(np.linalg.norm(model.theta)), sample.d_norm] + list(sample.wind_mid)
                )
            global_k += 1

        d_norm_by_ep.append(d_norms)
        d_vec_by_ep.append(d_vecs)
        pos_by_ep.append(positions)
        tick_states_by_ep.append(tick_states)
        if min_goal_dist <= config.scenario.goal_radius:
            goal_reached_eps += 1

    metrics = _compute_metrics(
        config, records, d_norm_by_ep, d_vec_by_ep, pos_by_ep, tick_states_by_ep,
        goal_reached_eps, infeasible_plans, fallback_steps, model,
    )

    if out_dir is not None:
        _write_outputs(Path(out_dir), config, records, traj_rows, residual_rows, metrics, dump_residuals)
    return metrics


def _compute_metrics(
    config: RunConfig,
    records: list[_StepRecord],
    d_norm_by_ep: list[list[float]],
    d_vec_by_ep: list[list[np.ndarray]],
    pos_by_ep: list[list[np.ndarray]],
    tick_states_by_ep: list[list[np.ndarray]],
    goal_reached_eps: int,
    infeasible_plans: int,
    fallback_steps: int,
    model: AdaptiveModel,
) -> RunMetrics:
    horizon_steps = config.controller.horizon_steps
    inner = config.inner_per_step
    steps_ep = config.steps_per_episode
    by_key = {(r.episode, r.k_local): r for r in records}

    point_flags: list[bool] = []
    point_flags_cal: list[bool] = []
    score_flags: list[bool] = []
    safe_flags: list[bool] = []
    breach_flags: list[bool] = []
    breach_covered = 0

    for rec in records:
        window_fits = rec.k_local <= steps_ep - horizon_steps
        if window_fits:
            d_norms = d_norm_by_ep[rec.episode]
            lo = rec.k_local * inner
            hi = lo + horizon_steps * inner
            rec.sup_d = float(np.max(d_norms[lo:hi]))
            covered = rec.sup_d <= rec.d_bar
            rec.covered_point = float(covered)
            point_flags.append(covered)
            if rec.case != MarginCase.INITIAL.value:
                point_flags_cal.append(covered)

            positions = np.asarray(pos_by_ep[rec.episode][lo : hi + 1])
            clear_ok = bool(np.all(config.scenario.clearance(positions) >= 0.0))
            alt = positions[:, 2]
            alt_ok = bool(
                np.all((alt >= config.scenario.altitude_min) & (alt <= config.scenario.altitude_max))
            )
            safe_flags.append(clear_ok and alt_ok)

        label = by_key.get((rec.episode, rec.k_local + horizon_steps))
        if (
            not math.isnan(rec.q_active)
            and label is not None
            and not math.isnan(label.score)
        ):
            covered_s = label.score <= rec.q_active
            rec.covered_score = float(covered_s)
            score_flags.append(covered_s)
            if window_fits and rec.plan_pos is not None:
                ticks = tick_states_by_ep[rec.episode]
                breach = False
                for i in range(1, horizon_steps + 1):
                    if rec.k_local + i < len(ticks):
                        err = float(
                            np.linalg.norm(ticks[rec.k_local + i][0:3] - rec.plan_pos[i])
                        )
                        if err > rec.tube_pos[i]:
                            breach = True
                            break
                breach_flags.append(breach)
                if breach and covered_s:
                    breach_covered += 1

    all_pos = np.vstack([np.asarray(p) for p in pos_by_ep])
    clearance = config.scenario.clearance(all_pos)
    alt = all_pos[:, 2]
    violations = int(
        np.sum(
            (clearance < 0.0)
            | (alt < config.scenario.altitude_min)
            | (alt > config.scenario.altitude_max)
        )
    )

    rates = [
        _smoothed_rate(np.asarray(vecs), config.grid_dt)
        for vecs in d_vec_by_ep
        if len(vecs) > 0
    ]
    rates_all = np.concatenate([r for r in rates if r.size > 0]) if rates else np.zeros(0)
    rate_max = float(np.max(rates_all)) if rates_all.size else 0.0
    rate_p99 = float(np.percentile(rates_all, 99)) if rates_all.size else 0.0

    d_bars = np.array([r.d_bar for r in records])
    scores = np.array([r.score for r in records if not math.isnan(r.score)])
    tube_means = [float(np.mean(r.tube_pos)) for r in records if r.tube_pos is not None]

    def frac(flags: list[bool]) -> float:
        return float(np.mean(flags)) if flags else math.nan

    score_count = len(scores)
    return RunMetrics(
        coverage_pointwise=frac(point_flags),
        coverage_pointwise_calibrated=frac(point_flags_cal),
        coverage_score=frac(score_flags),
        score_updates=score_count,
        labeled_updates=len(score_flags),
        mean_d_bar=float(np.mean(d_bars)) if d_bars.size else math.nan,
        max_d_bar=float(np.max(d_bars)) if d_bars.size else math.nan,
        mean_score=float(np.mean(scores)) if scores.size else math.nan,
        mean_tube_pos=float(np.mean(tube_means)) if tube_means else math.nan,
        constraint_violations=violations,
        safe_fraction=frac(safe_flags),
        goal_reached=goal_reached_eps == config.episodes,
        goal_reach_fraction=goal_reached_eps / config.episodes,
        infeasible_plans=infeasible_plans,
        fallback_steps=fallback_steps,
        tube_breach_rate=frac(breach_flags),
        miss_rate=1.0 - frac(score_flags) if score_flags else math.nan,
        breach_while_covered_rate=(breach_covered / len(breach_flags)) if breach_flags else math.nan,
        d_rate_max_smoothed=rate_max,
        d_rate_p99_smoothed=rate_p99,
        d_lipschitz_configured=config.ocp.d_lipschitz,
        d_lipschitz_exceeded=rate_max > config.ocp.d_lipschitz,
        model_lipschitz=estimate_model_lipschitz(model.theta),
        episodes=config.episodes,
        steps=len(records),
    )


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, columns: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_outputs(
    out_dir: Path,
    config: RunConfig,
    records: list[_StepRecord],
    traj_rows: list[list],
    residual_rows: list[list],
    metrics: RunMetrics,
    dump_residuals: bool,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "trajectory.csv", TRAJECTORY_COLUMNS, traj_rows)
    conf_rows = [
        [
            r.episode, r.k, r.k_local, r.thread, r.score, r.q_active, r.d_bar, r.case,
            r.feasible, r.fallback, r.tube_pos_max, r.sup_d, r.covered_point, r.covered_score,
        ]
        for r in records
    ]
    _write_csv(out_dir / "conformal.csv", CONFORMAL_COLUMNS, conf_rows)
    if dump_residuals:
        state_cols = [f"R_{i}" for i in range(8)]
        _write_csv(out_dir / "residuals.csv", ["episode", "k", "tau"] + state_cols, residual_rows)
    (out_dir / "metrics.json").write_text(
        json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    scenario = config.scenario
    (out_dir / "scenario.json").write_text(
        json.dumps(
            {
                "start": list(scenario.start),
                "goal": list(scenario.goal),
                "goal_radius": scenario.goal_radius,
                "vehicle_radius": scenario.vehicle_radius,
                "altitude_min": scenario.altitude_min,
                "altitude_max": scenario.altitude_max,
                "obstacles": [
                    {"center": list(o.center), "radius": o.radius} for o in scenario.obstacles
                ],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )


SWEEP_KEYS = ("alpha", "eta1", "d_lipschitz", "contraction", "adaptation", "seed")


def _apply_cell(base: RunConfig, cell: dict) -> RunConfig:
    ocp = base.ocp
    for key in ("alpha", "eta1", "d_lipschitz"):
        if key in cell:
            ocp = replace(ocp, **{key: cell[key]})
    controller = base.controller
    if "contraction" in cell:
        controller = replace(controller, contraction=cell["contraction"])
    out = replace(base, ocp=ocp, controller=controller)
    if "adaptation" in cell:
        out = replace(out, adaptation=bool(cell["adaptation"]))
    if "seed" in cell:
        out = replace(out, seed=int(cell["seed"]))
    return out


def _effective_values(config: RunConfig) -> dict:
    return {
        "alpha": config.ocp.alpha,
        "eta1": config.ocp.eta1,
        "d_lipschitz": config.ocp.d_lipschitz,
        "contraction": config.controller.contraction,
        "adaptation": config.adaptation,
        "seed": config.seed,
    }


def _run_cell(args: tuple[int, RunConfig, dict]) -> tuple[int, dict, dict | None, str]:
    index, config, cell = args
    effective = _effective_values(config)
    try:
        metrics = run_episode(config)
        return index, effective, metrics.to_dict(), "ok"
    except Exception as exc:  # recorded per cell, sweep continues
        return index, effective, None, f"error: {exc}"


def expand_grid(grid: dict) -> list[dict]:
    cells: list[dict] = [{}]
    for key in SWEEP_KEYS:
        if key not in grid:
            continue
        values = grid[key]
        cells = [dict(cell, **{key: v}) for cell in cells for v in values]
    return cells


def sweep(base: RunConfig, grid: dict, out_path: str | Path, workers: int = 1) -> list[dict]:
    """Run the cartesian grid, aggregate metrics into one CSV."""
    unknown = set(grid) - set(SWEEP_KEYS)
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
    cells = expand_grid(grid)
    jobs = [(i, _apply_cell(base, cell), cell) for i, cell in enumerate(cells)]
    if workers > 1:
        with Pool(workers) as pool:
            results = list(pool.imap(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    results.sort(key=lambda item: item[0])

    metric_fields = [f.name for f in dataclasses.fields(RunMetrics)]
    columns = ["cell"] + list(SWEEP_KEYS) + ["status"] + metric_fields
    rows = []
    out: list[dict] = []
    for index, effective, metrics, status in results:
        row = [index] + [effective[key] for key in SWEEP_KEYS] + [status]
        row += [metrics[name] if metrics else "" for name in metric_fields]
        rows.append(row)
        out.append({"cell": index, **effective, "status": status, "metrics": metrics})
    _write_csv(Path(out_path), columns, rows)
    return out
