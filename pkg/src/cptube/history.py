"""Rolling trajectory window and the integrated-residual score.

The stack keeps uniformly spaced samples of state, input and model
parameters over the last ``horizon`` seconds.  The score of a full window is
the largest norm, over all ordered grid-point pairs, of the measured state
increment minus the increment the nominal model predicts; with the model
error written as an additive residual this is exactly the largest
sub-interval integral of that residual.

Inputs are zero-order held: each stored ``u`` is the input that was applied
over the interval ending at that sample's timestamp (the natural convention
when samples are recorded after each integration step), and the quadrature
uses it on both ends of that interval, so input switches introduce no
quadrature error.  The very first sample's input is never consumed.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, InsufficientHistoryError, SequencingError

TIME_TOLERANCE = 1e-9

NominalFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ScoreResult:
    value: float
    argmax_pair: tuple[float, float]
    residual_cumsum: np.ndarray  # cumulative residual curve R, shape (N, n)


class HistoryStack:
    """Ring buffer of ``(t, x, u, theta)`` samples on a uniform grid."""

    def __init__(self, grid_dt: float, horizon: float):
        if grid_dt <= 0 or horizon <= 0:
            raise ConfigError("grid_dt and horizon must be positive")
        ratio = horizon / grid_dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError(
                f"horizon ({horizon}) must be a positive integer multiple of grid_dt ({grid_dt})"
            )
        self.grid_dt = float(grid_dt)
        self.horizon = float(horizon)
        self.capacity = int(round(ratio)) + 1
        self._samples: deque = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._samples)

    @property
    def full(self) -> bool:
        return len(self._samples) == self.capacity

    @property
    def last_time(self) -> float | None:
        return self._samples[-1][0] if self._samples else None

    def push(self, t: float, x: np.ndarray, u: np.ndarray, theta: np.ndarray) -> None:
        """Append a sample; evicts anything older than ``t - horizon``.

        ``u`` is the input that was held on ``[t - grid_dt, t)``.  Timestamps
        must advance by exactly ``grid_dt`` (within tolerance): the stack
        never interpolates over gaps.
        """
        if self._samples:
            gap = t - self._samples[-1][0]
            if abs(gap - self.grid_dt) > TIME_TOLERANCE:
                raise SequencingError(
                    f"timestamp {t} is {gap:.3e}s after previous sample; expected {self.grid_dt}s"
                )
        self._samples.append(
            (float(t), np.array(x, dtype=float), np.array(u, dtype=float), np.array(theta, dtype=float))
        )

    def clear(self) -> None:
        self._samples.clear()

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        ts = np.array([s[0] for s in self._samples])
        xs = np.stack([s[1] for s in self._samples])
        us = np.stack([s[2] for s in self._samples])
        thetas = np.stack([s[3] for s in self._samples])
        return ts, xs, us, thetas

    def integral_score(self, f_nom: NominalFn) -> ScoreResult:
        """Largest sub-interval norm of the accumulated model residual.

        ``f_nom(x, u, theta) -> dx/dt`` is evaluated with each sample's own
        stored parameters.  Reference implementation: trapezoidal cumulative
        integral followed by an O(N^2) scan over ordered grid pairs.
        """
        if not self.full:
            raise InsufficientHistoryError(
                f"window has {len(self._samples)}/{self.capacity} samples"
            )
        ts, xs, us, thetas = self.arrays()
        n = self.capacity
        # Two evaluations per interval with that interval's held input,
        # which is recorded on the sample at the interval's right end.
        f_left = np.stack([f_nom(xs[i], us[i + 1], thetas[i]) for i in range(n - 1)])
        f_right = np.stack([f_nom(xs[i + 1], us[i + 1], thetas[i + 1]) for i in range(n - 1)])
        increments = 0.5 * (f_left + f_right) * self.grid_dt
        integral = np.vstack([np.zeros(xs.shape[1]), np.cumsum(increments, axis=0)])
        residual = xs - xs[0] - integral

        diff = residual[None, :, :] - residual[:, None, :]
        norms = np.linalg.norm(diff, axis=2)
        norms[np.tril_indices(n, k=-1)] = -1.0  # only ordered pairs i <= j
        flat = int(np.argmax(norms))
        i, j = divmod(flat, n)
        return ScoreResult(
            value=float(norms[i, j]),
            argmax_pair=(float(ts[i]), float(ts[j])),
            residual_cumsum=residual,
        )


@dataclass(frozen=True)
class OracleTrajectory:
    """A rate-limited random disturbance with its exact grid-level score."""

    times: np.ndarray
    values: np.ndarray  # (N, dim)
    score: float
    sup_norm: float


def _pair_scan_score(cumulative: np.ndarray) -> float:
    # Written out independently of HistoryStack.integral_score on purpose:
    # the two paths cross-check each other in the verification suite.
    diff = cumulative[None, :, :] - cumulative[:, None, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return float(np.sqrt(np.max(sq)))


def disturbance_score(times: np.ndarray, values: np.ndarray) -> float:
    """Exact largest sub-interval integral norm of a sampled disturbance.

    Trapezoidal on the grid, which is exact for the piecewise-linear
    trajectories the oracle produces.
    """
    n, dim = values.shape
    cumulative = np.empty((n, dim))
    cumulative[0] = 0.0
    dt = np.diff(times)[:, None]
    np.cumsum(0.5 * (values[:-1] + values[1:]) * dt, axis=0, out=cumulative[1:])
    return _pair_scan_score(cumulative)


def lipschitz_disturbance_oracle(
    d_lipschitz: float,
    horizon: float,
    grid_dt: float,
    seed: int,
    dim: int = 3,
    init_scale: float | None = None,
) -> OracleTrajectory:
    """Random trajectory whose per-step change never exceeds the rate limit.

    Built by integrating a random derivative whose norm is clipped to
    ``d_lipschitz``; deterministic per seed.  ``init_scale`` caps the random
    starting magnitude (default ``2 * d_lipschitz * horizon``) so scores
    land on both sides of the margin-case boundary.
    """
    if d_lipschitz <= 0:
        raise ConfigError("d_lipschitz must be positive")
    rng = np.random.default_rng(seed)
    n_points = int(round(horizon / grid_dt)) + 1
    times = np.arange(n_points) * grid_dt

    if init_scale is None:
        init_scale = 2.0 * d_lipschitz * horizon
    start = rng.normal(size=dim)
    norm = math.sqrt(float(start @ start))
    if norm > 0:
        start *= rng.uniform(0.0, init_scale) / norm

    derivs = rng.normal(scale=d_lipschitz, size=(n_points - 1, dim))
    sq = np.einsum("ij,ij->i", derivs, derivs)
    over = sq > d_lipschitz * d_lipschitz
    if over.any():
        derivs[over] *= (d_lipschitz / np.sqrt(sq[over]))[:, None]

    values = np.empty((n_points, dim))
    values[0] = start
    np.cumsum(derivs * grid_dt, axis=0, out=values[1:])
    values[1:] += start
    return OracleTrajectory(
        times=times,
        values=values,
        score=disturbance_score(times, values),
        sup_norm=float(np.sqrt(np.max(np.einsum("ij,ij->i", values, values)))),
    )
