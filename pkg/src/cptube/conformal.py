"""Staggered online quantile tracking and disturbance-margin synthesis.

A bank of ``P`` independent thresholds is kept, one per step phase
``k mod P``.  Each call to :meth:`ThreadBank.update` applies one sub-gradient
step of the pinball loss to the active thread only, using the delayed label
(the integral score of the window that just closed).  Because a prediction
issued at step ``k`` is labeled ``P`` steps later by the score of the same
phase, every thread sees a self-consistent stream and the classic online
coverage guarantee applies per thread.

The active threshold bounds the *integrated* disturbance over the upcoming
window; :func:`margin_from_threshold` converts it to a pointwise bound using
the disturbance rate limit: a square-root law when the threshold is small
enough that the worst case is a triangular excursion inside the window, and
a truncated-trapezoid law otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataIntegrityError, SequencingError


def pinball_loss(r: float, alpha: float) -> float:
    """Quantile check loss ``(1-alpha)*max(r,0) + alpha*max(-r,0)``."""
    return (1.0 - alpha) * max(r, 0.0) + alpha * max(-r, 0.0)


def ocp_update(q: float, score: float, eta: float, alpha: float) -> float:
    """One sub-gradient step of the threshold recursion.

    A miss (``score`` strictly above ``q``) pushes the threshold up by
    ``eta*(1-alpha)``; a covered score pulls it down by ``eta*alpha``.
    Ties count as covered.  The raw value may go negative; clamping happens
    only inside :func:`margin_from_threshold` so the telescoping coverage
    argument stays exact.
    """
    if not math.isfinite(score):
        raise DataIntegrityError(f"non-finite score: {score!r}")
    indicator = 1.0 if score > q else 0.0
    return q + eta * (indicator - alpha)


def coverage_bound(score_bound: float, eta1: float, eta_final: float, count: int) -> float:
    """Worst-case empirical coverage error after ``count`` updates.

    Valid for scores in ``[0, score_bound]`` and a non-increasing step-size
    sequence starting at ``eta1`` and ending at ``eta_final``.
    """
    if score_bound <= 0 or eta1 <= 0 or eta_final <= 0 or count < 1:
        raise ConfigError("coverage_bound requires positive bound, steps and count >= 1")
    return (score_bound + eta1) / (eta_final * count)


class MarginCase(str, Enum):
    SQRT = "sqrt"
    TRAPEZOID = "trapezoid"
    INITIAL = "initial"


@dataclass(frozen=True)
class OcpConfig:
    """Calibration parameters.

    ``horizon`` must be an integer multiple of ``dt``; the ratio is the
    thread count ``P``.  ``eta_schedule`` is ``"constant"`` or
    ``"sqrt_decay"`` (``eta1 / sqrt(k)`` with the global step index).
    """

    alpha: float = 0.1
    eta1: float = 0.1
    eta_schedule: str = "constant"
    q_init: float = 0.0
    d_init: float = 5.0
    d_lipschitz: float = 8.0
    horizon: float = 0.5
    dt: float = 0.05

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0,1), got {self.alpha}")
        if self.eta1 <= 0.0:
            raise ConfigError(f"eta1 must be positive, got {self.eta1}")
        if self.eta_schedule not in ("constant", "sqrt_decay"):
            raise ConfigError(f"unknown eta_schedule {self.eta_schedule!r}")
        if self.q_init < 0.0:
            raise ConfigError(f"q_init must be >= 0, got {self.q_init}")
        if self.d_lipschitz <= 0.0:
            raise ConfigError(f"d_lipschitz must be positive, got {self.d_lipschitz}")
        if self.horizon <= 0.0 or self.dt <= 0.0:
            raise ConfigError("horizon and dt must be positive")
        ratio = self.horizon / self.dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError(
                f"horizon ({self.horizon}) must be a positive integer multiple of dt ({self.dt})"
            )

    @property
    def threads(self) -> int:
        return int(round(self.horizon / self.dt))

    def eta_at(self, k: int) -> float:
        if self.eta_schedule == "constant":
            return self.eta1
        # sqrt_decay uses the global step index; guard k=0 at stream start.
        return self.eta1 / math.sqrt(max(k, 1))


@dataclass(frozen=True)
class MarginRecord:
    """Per-step margin output: which thread fired and what bound it implies."""

    step: int
    thread: int
    q_active: float
    case: MarginCase
    d_bar: float


def margin_from_threshold(
    q_active: float, config: OcpConfig, step: int = -1, thread: int = -1
) -> MarginRecord:
    """Convert an integrated-disturbance threshold to a pointwise bound.

    Negative thresholds are clamped to zero here (and only here).  The two
    branches meet continuously at ``q = 0.5 * L * T^2`` and the result is
    monotone nondecreasing in ``q_active``.
    """
    q = max(q_active, 0.0)
    lip, horizon = config.d_lipschitz, config.horizon
    if q < 0.5 * lip * horizon * horizon:
        case = MarginCase.SQRT
        d_bar = math.sqrt(2.0 * lip * q)
    else:
        case = MarginCase.TRAPEZOID
        d_bar = q / horizon + 0.5 * lip * horizon
    return MarginRecord(step=step, thread=thread, q_active=q_active, case=case, d_bar=d_bar)


def initial_margin(config: OcpConfig, step: int = -1) -> MarginRecord:
    """Conservative margin used before the first window has closed."""
    return MarginRecord(
        step=step,
        thread=step % config.threads if step >= 0 else -1,
        q_active=math.nan,
        case=MarginCase.INITIAL,
        d_bar=config.d_init,
    )


@dataclass
class ThreadBank:
    """Mutable bank of per-phase thresholds.

    Single-writer: ``update`` must be called with strictly increasing ``k``.
    Skipped steps are allowed (the untouched threads simply keep their
    values), which is also what makes per-thread behaviour identical to a
    lone threshold fed the same subsequence.
    """

    config: OcpConfig
    thresholds: np.ndarray
    step_index: int = -1
    update_counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        if self.thresholds.shape != (self.config.threads,):
            raise ConfigError(
                f"expected {self.config.threads} thresholds, got shape {self.thresholds.shape}"
            )
        if self.update_counts is None:
            self.update_counts = np.zeros(self.config.threads, dtype=int)
        else:
            self.update_counts = np.asarray(self.update_counts, dtype=int)

    @classmethod
    def from_config(cls, config: OcpConfig) -> "ThreadBank":
        return cls(config=config, thresholds=np.full(config.threads, config.q_init))

    def update(self, k: int, score: float) -> float:
        """Apply the delayed label ``score`` to thread ``k mod P``.

        Returns the new active threshold, which calibrates the window opening
        at step ``k``.
        """
        if k <= self.step_index:
            raise SequencingError(f"step {k} not after last processed step {self.step_index}")
        j = k % self.config.threads
        self.thresholds[j] = ocp_update(
            self.thresholds[j], score, self.config.eta_at(k), self.config.alpha
        )
        self.update_counts[j] += 1
        self.step_index = k
        return float(self.thresholds[j])

    def active_thread(self, k: int) -> int:
        return k % self.config.threads

    def to_checkpoint(self) -> dict:
        return {
            "thresholds": self.thresholds.tolist(),
            "step_index": self.step_index,
            "update_counts": self.update_counts.tolist(),
        }

    @classmethod
    def from_checkpoint(cls, config: OcpConfig, payload: dict) -> "ThreadBank":
        return cls(
            config=config,
            thresholds=np.asarray(payload["thresholds"], dtype=float),
            step_index=int(payload["step_index"]),
            update_counts=np.asarray(payload["update_counts"], dtype=int),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_checkpoint(), indent=2) + "\n")

    @classmethod
    def load(cls, config: OcpConfig, path: str | Path) -> "ThreadBank":
        return cls.from_checkpoint(config, json.loads(Path(path).read_text()))
