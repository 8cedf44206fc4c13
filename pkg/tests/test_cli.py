import json
from pathlib import Path

import numpy as np

from cptube.cli import main
from cptube.model import load_checkpoint

SCENARIO_FILE = Path(__file__).resolve().parent.parent / "scenarios" / "paper.json"


def write_small_config(path: Path, **extra) -> Path:
    payload = {
        "seed": 4,
        "episodes": 1,
        "ocp": {"eta1": 0.2, "q_init": 0.5, "d_init": 2.0},
        "scenario": {
            "start": [-2.0, 0.0, 1.0],
            "goal": [1.5, 0.0, 1.0],
            "duration": 1.5,
            "obstacles": [],
            "altitude_min": 0.5,
            "altitude_max": 1.5,
        },
        "controller": {"population": 64, "elites": 8, "iterations": 3},
    }
    payload.update(extra)
    path.write_text(json.dumps(payload))
    return path


class TestRun:
    def test_run_writes_outputs(self, tmp_path, capsys):
        config = write_small_config(tmp_path / "cfg.json")
        out = tmp_path / "out"
        code = main(["run", "--config", str(config), "--out", str(out)])
        assert code == 0
        for name in ("trajectory.csv", "conformal.csv", "metrics.json"):
            assert (out / name).exists()
        printed = json.loads(capsys.readouterr().out)
        assert printed == json.loads((out / "metrics.json").read_text())

    def test_no_adapt_and_seed_flags(self, tmp_path, capsys):
        config = write_small_config(tmp_path / "cfg.json")
        code = main(["run", "--config", str(config), "--no-adapt", "--seed", "9"])
        assert code == 0
        capsys.readouterr()

    def test_bad_config_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"ocp": {"alpha": 2.0}}))
        assert main(["run", "--config", str(bad)]) == 2
        assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
        capsys.readouterr()


class TestVerify:
    def test_passing_suite_exits_0(self, tmp_path, capsys):
        out = tmp_path / "report.json"
        code = main(["verify", "--suite", "plant-convergence", "--out", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["suite"] == "plant-convergence"
        assert payload["passed"] is True
        capsys.readouterr()


class TestSweep:
    def test_sweep_writes_csv(self, tmp_path, capsys):
        config = write_small_config(tmp_path / "cfg.json")
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({"seed": [1, 2]}))
        out = tmp_path / "sweep.csv"
        code = main(["sweep", "--config", str(config), "--grid", str(grid), "--out", str(out)])
        assert code == 0
        assert out.exists()
        capsys.readouterr()

    def test_bad_grid_exits_2(self, tmp_path, capsys):
        config = write_small_config(tmp_path / "cfg.json")
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({"nope": [1]}))
        assert main(["sweep", "--config", str(config), "--grid", str(grid)]) == 2
        capsys.readouterr()


class TestPretrain:
    def test_pretrain_writes_checkpoint(self, tmp_path, capsys):
        config = write_small_config(tmp_path / "cfg.json")
        out = tmp_path / "prior.npz"
        code = main(["pretrain", "--config", str(config), "--out", str(out)])
        assert code == 0
        model = load_checkpoint(out)
        assert np.array_equal(model.theta, model.theta_prior)
        capsys.readouterr()
