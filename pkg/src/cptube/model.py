"""Adaptive residual predictor: a 4-layer ReLU MLP adapted online.

The network maps ``[v_x, v_y, v_z, roll, pitch]`` to a predicted residual
acceleration.  All weights and biases live in one flat parameter vector so
the whole network is adapted by a single gradient law with regularization
toward a prior, followed by projection onto a norm ball that keeps the
parameters in a compact set.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

LAYER_SIZES = (5, 50, 50, 50, 3)
PARAM_COUNT = sum((LAYER_SIZES[i] + 1) * LAYER_SIZES[i + 1] for i in range(len(LAYER_SIZES) - 1))
THETA_MAX = 10.0


def _layer_slices() -> list[tuple[slice, slice, int, int]]:
    slices = []
    offset = 0
    for i in range(len(LAYER_SIZES) - 1):
        fan_in, fan_out = LAYER_SIZES[i], LAYER_SIZES[i + 1]
        w = slice(offset, offset + fan_out * fan_in)
        offset += fan_out * fan_in
        b = slice(offset, offset + fan_out)
        offset += fan_out
        slices.append((w, b, fan_out, fan_in))
    return slices


_SLICES = _layer_slices()
assert _SLICES[-1][1].stop == PARAM_COUNT


def unpack(theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of the flat parameter vector as per-layer (W, b) pairs."""
    if theta.shape != (PARAM_COUNT,):
        raise ConfigError(f"expected parameter vector of length {PARAM_COUNT}, got {theta.shape}")
    return [(theta[w].reshape(fo, fi), theta[b]) for w, b, fo, fi in _SLICES]


def init_theta(rng: np.random.Generator, scale: float = 0.1) -> np.ndarray:
    """Seeded random initialization: W ~ N(0, (scale/sqrt(fan_in))^2), b = 0."""
    theta = np.zeros(PARAM_COUNT)
    for w, _b, fan_out, fan_in in _SLICES:
        theta[w] = rng.normal(scale=scale / np.sqrt(fan_in), size=fan_out * fan_in)
    return theta


def mlp_apply(layers: list[tuple[np.ndarray, np.ndarray]], xi: np.ndarray) -> np.ndarray:
    """Forward pass given pre-unpacked layers (hot path for batched rollouts)."""
    h = xi
    for weight, bias in layers[:-1]:
        z = h @ weight.T
        z += bias
        np.maximum(z, 0.0, out=z)
        h = z
    weight, bias = layers[-1]
    out = h @ weight.T
    out += bias
    return out


def mlp_forward(theta: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Predicted residual acceleration; ``xi`` may be (5,) or batched (B, 5)."""
    layers = unpack(theta)
    h = np.asarray(xi, dtype=float)
    single = h.ndim == 1
    if single:
        h = h[None, :]
    out = mlp_apply(layers, h)
    return out[0] if single else out


def _forward_trace(theta: np.ndarray, xi: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    layers = unpack(theta)
    activations = [np.asarray(xi, dtype=float)]
    pre = []
    h = activations[0]
    for weight, bias in layers[:-1]:
        z = weight @ h + bias
        pre.append(z)
        h = np.maximum(z, 0.0)
        activations.append(h)
    return activations, pre


def mlp_jacobian(theta: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Derivative of the output w.r.t. the flat parameter vector, shape (3, d).

    Layer-wise reverse accumulation; the ReLU subgradient at exactly zero is
    taken to be zero.
    """
    layers = unpack(theta)
    activations, pre = _forward_trace(theta, xi)
    n_out = LAYER_SIZES[-1]
    jac = np.zeros((n_out, PARAM_COUNT))

    # g holds d(output)/d(pre-activation of layer l) while walking backwards.
    g = np.eye(n_out)
    for idx in range(len(layers) - 1, -1, -1):
        w_slice, b_slice, fan_out, fan_in = _SLICES[idx]
        h_in = activations[idx]
        jac[:, w_slice] = (g[:, :, None] * h_in[None, None, :]).reshape(n_out, fan_out * fan_in)
        jac[:, b_slice] = g
        if idx > 0:
            g = (g @ layers[idx][0]) * (pre[idx - 1] > 0.0)
    return jac


def mlp_param_grad(theta: np.ndarray, xi: np.ndarray, out_grad: np.ndarray) -> np.ndarray:
    """``J^T @ out_grad`` without materializing the full Jacobian."""
    layers = unpack(theta)
    activations, pre = _forward_trace(theta, xi)
    grad = np.zeros(PARAM_COUNT)
    g = np.asarray(out_grad, dtype=float)
    for idx in range(len(layers) - 1, -1, -1):
        w_slice, b_slice, _fo, _fi = _SLICES[idx]
        grad[w_slice] = np.outer(g, activations[idx]).ravel()
        grad[b_slice] = g
        if idx > 0:
            g = (layers[idx][0].T @ g) * (pre[idx - 1] > 0.0)
    return grad


@dataclass(frozen=True)
class AdaptConfig:
    gamma: float = 5.0  # learning gain
    lam: float = 0.1  # regularization toward the prior
    dt: float = 0.01  # Euler step of the continuous law (inner simulation rate)

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")


@dataclass
class AdaptiveModel:
    """Current parameters plus the prior they are regularized toward."""

    theta: np.ndarray
    theta_prior: np.ndarray

    @classmethod
    def initialize(cls, seed: int, scale: float = 0.1) -> "AdaptiveModel":
        theta0 = init_theta(np.random.default_rng(seed), scale=scale)
        return cls(theta=theta0.copy(), theta_prior=theta0.copy())

    @classmethod
    def zeros(cls) -> "AdaptiveModel":
        return cls(theta=np.zeros(PARAM_COUNT), theta_prior=np.zeros(PARAM_COUNT))

    def predict(self, xi: np.ndarray) -> np.ndarray:
        return mlp_forward(self.theta, xi)


def residual_eps_acc(
    v_now: np.ndarray, v_prev: np.ndarray, dt: float, vdot_nom: np.ndarray
) -> np.ndarray:
    """Finite-difference acceleration residual against the nominal prediction."""
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    return (np.asarray(v_now) - np.asarray(v_prev)) / dt - np.asarray(vdot_nom)


def adapt_step(
    model: AdaptiveModel, xi: np.ndarray, eps_acc: np.ndarray, config: AdaptConfig
) -> None:
    """Euler step of the gradient adaptation law, then norm projection.

    theta <- theta + dt * (gamma * J^T eps - lam * (theta - prior)), rescaled
    onto the ball ||theta|| <= THETA_MAX if the step left it.
    """
    grad = mlp_param_grad(model.theta, xi, eps_acc)
    model.theta += config.dt * (config.gamma * grad - config.lam * (model.theta - model.theta_prior))
    norm = float(np.linalg.norm(model.theta))
    if norm > THETA_MAX:
        model.theta *= THETA_MAX / norm


def fit_output_layer(
    model: AdaptiveModel, xis: np.ndarray, residuals: np.ndarray, rcond: float | None = 1e-3
) -> AdaptiveModel:
    """Least-squares fit of the last layer on logged (xi, residual) pairs.

    Used when building a prior offline from a disturbance-on,
    adaptation-off run; the other layers are left as they are.  ``rcond``
    truncates small singular directions of the hidden-feature design so the
    solution stays inside the parameter norm ball.
    """
    layers = unpack(model.theta)
    h = np.asarray(xis, dtype=float)
    for weight, bias in layers[:-1]:
        h = np.maximum(h @ weight.T + bias, 0.0)
    design = np.hstack([h, np.ones((h.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(design, np.asarray(residuals, dtype=float), rcond=rcond)

    theta = model.theta.copy()
    w_slice, b_slice, fan_out, fan_in = _SLICES[-1]
    theta[w_slice] = coef[:-1].T.ravel()
    theta[b_slice] = coef[-1]
    norm = float(np.linalg.norm(theta))
    if norm > THETA_MAX:
        theta *= THETA_MAX / norm
    return AdaptiveModel(theta=theta.copy(), theta_prior=theta.copy())


def save_checkpoint(path: str | Path, model: AdaptiveModel) -> None:
    np.savez(
        path,
        layer_sizes=np.array(LAYER_SIZES),
        theta=model.theta,
        theta_prior=model.theta_prior,
    )


def load_checkpoint(path: str | Path) -> AdaptiveModel:
    data = np.load(path)
    if tuple(data["layer_sizes"]) != LAYER_SIZES:
        raise ConfigError(f"checkpoint architecture {tuple(data['layer_sizes'])} != {LAYER_SIZES}")
    return AdaptiveModel(theta=data["theta"].copy(), theta_prior=data["theta_prior"].copy())
