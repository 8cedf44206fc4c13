#!/usr/bin/env python3
"""Regenerate the stored run fixtures consumed by the figure tests.

Run from the repository root with the simulation package installed:
    python3 frontend/scripts/make_fixtures.py
"""

import json
import sys
from dataclasses import replace
from pathlib import Path

ROOT = Path(__file__).resolve().parents[2]
FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"

sys.path.insert(0, str(ROOT / "src"))

from cptube.controller import ControllerConfig, Scenario  # noqa: E402
from cptube.harness import RunConfig, run_episode, sweep  # noqa: E402


def main() -> None:
    paper = RunConfig.from_file(ROOT / "scenarios" / "paper.json")

    # Five stored runs: one full paper flight plus four half-duration seeds.
    run_episode(replace(paper, seed=0), out_dir=FIXTURES / "runs" / "run0")
    short_scenario = replace(paper.scenario, duration=2.5)
    for seed in range(1, 5):
        cfg = replace(paper, seed=seed, scenario=short_scenario)
        run_episode(cfg, out_dir=FIXTURES / "runs" / f"run{seed}")

    # Degenerate zero-disturbance run: flat curves, 100% coverage.
    zero = RunConfig(
        ocp=replace(paper.ocp, eta1=0.2, q_init=0.5, d_init=2.0),
        scenario=Scenario(
            start=(-2.0, 0.0, 1.0),
            goal=(1.5, 0.0, 1.0),
            duration=2.0,
            obstacles=(),
            altitude_min=0.5,
            altitude_max=1.5,
        ),
        controller=ControllerConfig(population=64, elites=8, iterations=3),
        plant=replace(paper.plant, drag_diag=(0.0, 0.0, 0.0), noise_sigma=(0.0, 0.0, 0.0), wind_scale=0.0),
        adaptation=False,
        theta_init="zeros",
        seed=1,
    )
    run_episode(zero, out_dir=FIXTURES / "runs" / "zero")

    # Aggregated sweep over three target error rates.
    small = replace(
        paper,
        scenario=replace(short_scenario, obstacles=paper.scenario.obstacles),
    )
    sweep(small, {"alpha": [0.05, 0.1, 0.2], "seed": [0, 1]}, FIXTURES / "sweep.csv", workers=2)
    print(f"fixtures written under {FIXTURES}")


if __name__ == "__main__":
    main()
