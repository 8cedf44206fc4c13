import csv
import json
from pathlib import Path

import numpy as np
import pytest

from cptube.conformal import OcpConfig
from cptube.controller import ControllerConfig, Scenario
from cptube.errors import ConfigError
from cptube.harness import (
    CONFORMAL_COLUMNS,
    TRAJECTORY_COLUMNS,
    RunConfig,
    expand_grid,
    run_episode,
    sweep,
)
from cptube.model import AdaptConfig
from cptube.plant import WindDragConfig

SCENARIO_FILE = Path(__file__).resolve().parent.parent / "scenarios" / "paper.json"


def small_config(**overrides):
    """2-second open-field configuration that keeps unit tests fast."""
    base = dict(
        ocp=OcpConfig(eta1=0.2, q_init=0.5, d_init=2.0),
        scenario=Scenario(
            start=(-2.0, 0.0, 1.0),
            goal=(1.5, 0.0, 1.0),
            duration=2.0,
            obstacles=(),
            altitude_min=0.5,
            altitude_max=1.5,
        ),
        controller=ControllerConfig(population=64, elites=8, iterations=3),
        seed=7,
    )
    base.update(overrides)
    return RunConfig(**base)


class TestRunConfig:
    def test_paper_scenario_loads(self):
        config = RunConfig.from_file(SCENARIO_FILE)
        assert config.ocp.threads == 10
        assert config.controller.horizon_steps == 10
        assert config.steps_per_episode == 100
        assert config.inner_per_step == 5
        assert len(config.scenario.obstacles) == 3

    def test_rejects_mismatched_dt(self):
        with pytest.raises(ConfigError):
            RunConfig(ocp=OcpConfig(dt=0.05), controller=ControllerConfig(dt=0.1))

    def test_rejects_thread_horizon_mismatch(self):
        with pytest.raises(ConfigError):
            RunConfig(ocp=OcpConfig(horizon=0.25), controller=ControllerConfig(horizon_steps=10))

    def test_rejects_bad_grid_dt(self):
        with pytest.raises(ConfigError):
            RunConfig(grid_dt=0.03)

    def test_rejects_adapt_dt_mismatch(self):
        with pytest.raises(ConfigError):
            RunConfig(adapt=AdaptConfig(dt=0.005))

    def test_from_dict_unknown_key_is_config_error(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"ocp": {"bogus_field": 1.0}})

    def test_from_file_missing_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.from_file(tmp_path / "nope.json")


class TestDegenerateRun:
    def test_zero_disturbance_zero_model(self):
        # Wind, drag and noise off with a zero frozen model: scores vanish,
        # the margin decays at eta*alpha per thread update, and every window
        # is covered.
        config = small_config(
            plant=WindDragConfig(drag_diag=(0, 0, 0), noise_sigma=(0, 0, 0), wind_scale=0.0),
            adaptation=False,
            theta_init="zeros",
        )
        metrics = run_episode(config)
        # residual quadrature error of the smooth thrust dynamics only
        assert metrics.mean_score <= 1e-3
        assert metrics.coverage_pointwise == 1.0
        assert metrics.constraint_violations == 0
        assert metrics.goal_reached

    def test_margin_decays_at_eta_alpha_per_update(self, tmp_path):
        config = small_config(
            plant=WindDragConfig(drag_diag=(0, 0, 0), noise_sigma=(0, 0, 0), wind_scale=0.0),
            adaptation=False,
            theta_init="zeros",
        )
        run_episode(config, out_dir=tmp_path)
        rows = list(csv.DictReader(open(tmp_path / "conformal.csv")))
        per_thread = {}
        for row in rows:
            if row["case"] == "initial":
                continue
            per_thread.setdefault(int(row["j"]), []).append(float(row["q_active"]))
        eta_alpha = config.ocp.eta1 * config.ocp.alpha
        for thread, qs in per_thread.items():
            drops = np.diff(qs)
            assert np.allclose(drops, -eta_alpha, atol=1e-12), (thread, qs)


class TestReplayDeterminism:
    def test_byte_identical_outputs(self, tmp_path):
        config = small_config(seed=11)
        dirs = [tmp_path / "a", tmp_path / "b"]
        metrics = [run_episode(config, out_dir=d) for d in dirs]
        assert metrics[0].to_dict() == metrics[1].to_dict()
        for name in ("trajectory.csv", "conformal.csv", "metrics.json"):
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()

    def test_seed_changes_trajectory(self, tmp_path):
        m1 = run_episode(small_config(seed=1))
        m2 = run_episode(small_config(seed=2))
        assert m1.to_dict() != m2.to_dict()


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    config = small_config(seed=5)
    run_episode(config, out_dir=out, dump_residuals=True)
    return out


class TestBookkeeping:
    def test_csv_schemas(self, run_dir):
        with open(run_dir / "trajectory.csv") as fh:
            assert next(csv.reader(fh)) == TRAJECTORY_COLUMNS
        with open(run_dir / "conformal.csv") as fh:
            assert next(csv.reader(fh)) == CONFORMAL_COLUMNS

    def test_score_label_cross_index(self, run_dir):
        # The covered flag of step k must agree with comparing its issued
        # threshold against the score that arrived P steps later.
        rows = list(csv.DictReader(open(run_dir / "conformal.csv")))
        threads = 10
        by_k = {int(r["k"]): r for r in rows}
        checked = 0
        for r in rows:
            if r["covered_score"] == "nan":
                continue
            label = by_k[int(r["k"]) + threads]
            expected = float(label["score"]) <= float(r["q_active"])
            assert (r["covered_score"] == "1.0") == expected
            checked += 1
        assert checked > 0

    def test_pointwise_flag_cross_index(self, run_dir):
        rows = list(csv.DictReader(open(run_dir / "conformal.csv")))
        for r in rows:
            if r["covered_point"] == "nan":
                continue
            expected = float(r["sup_d_true"]) <= float(r["d_bar"])
            assert (r["covered_point"] == "1.0") == expected

    def test_metrics_json_matches_conformal_csv(self, run_dir):
        metrics = json.loads((run_dir / "metrics.json").read_text())
        rows = list(csv.DictReader(open(run_dir / "conformal.csv")))
        flags = [r["covered_point"] == "1.0" for r in rows if r["covered_point"] != "nan"]
        assert metrics["coverage_pointwise"] == pytest.approx(np.mean(flags))

    def test_residual_dump_shape(self, run_dir):
        rows = list(csv.DictReader(open(run_dir / "residuals.csv")))
        ks = {int(r["k"]) for r in rows}
        # one cumulative curve of 51 grid points per scored step
        per_k = [sum(1 for r in rows if int(r["k"]) == k) for k in sorted(ks)]
        assert set(per_k) == {51}


class TestSweep:
    def test_single_cell_matches_run_episode(self, tmp_path):
        config = small_config(seed=3)
        direct = run_episode(config)
        results = sweep(config, {"seed": [3]}, tmp_path / "sweep.csv")
        assert results[0]["status"] == "ok"
        assert results[0]["metrics"] == direct.to_dict()

    def test_grid_expansion(self):
        cells = expand_grid({"alpha": [0.05, 0.1], "seed": [0, 1, 2]})
        assert len(cells) == 6
        assert {"alpha": 0.05, "seed": 2} in cells

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            sweep(small_config(), {"bogus": [1]}, tmp_path / "s.csv")

    def test_failures_recorded_not_raised(self, tmp_path):
        # Seed is fine but the episode aborts: force attitude blow-up via an
        # insane feedback gain; the sweep must record the error and continue.
        gain = np.zeros((3, 8))
        gain[0, 6] = 4000.0  # destabilizing roll feedback
        config = small_config(controller=ControllerConfig(
            population=64, elites=8, iterations=3, feedback_gain=gain))
        results = sweep(config, {"seed": [0, 1]}, tmp_path / "s.csv")
        assert len(results) == 2
        assert all(r["status"].startswith("error") or r["status"] == "ok" for r in results)

    def test_csv_written(self, tmp_path):
        out = tmp_path / "sweep.csv"
        sweep(small_config(), {"seed": [1]}, out)
        rows = list(csv.DictReader(open(out)))
        assert rows[0]["status"] == "ok"
        assert "coverage_pointwise" in rows[0]
