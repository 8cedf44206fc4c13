"""Online conformal disturbance margins for adaptive tube MPC.

Subpackages: ``conformal`` (staggered quantile tracking and margins),
``history`` (rolling window and integral score), ``model`` (adaptive MLP
residual predictor), ``plant`` (quadcopter truth simulator), ``controller``
(CEM tube planner), ``harness`` (episode orchestration and metrics),
``verify`` (property suites).
"""

from .conformal import (
    MarginCase,
    MarginRecord,
    OcpConfig,
    ThreadBank,
    coverage_bound,
    margin_from_threshold,
    ocp_update,
    pinball_loss,
)
from .harness import RunConfig, RunMetrics, run_episode, sweep
from .history import HistoryStack, lipschitz_disturbance_oracle

__all__ = [
    "MarginCase",
    "MarginRecord",
    "OcpConfig",
    "ThreadBank",
    "coverage_bound",
    "margin_from_threshold",
    "ocp_update",
    "pinball_loss",
    "RunConfig",
    "RunMetrics",
    "run_episode",
    "sweep",
    "HistoryStack",
    "lipschitz_disturbance_oracle",
]

__version__ = "0.1.0"
