"""Bias-free ReLU network h(x; theta) = sqrt(m) W_L relu(W_{L-1} ... relu(W_1 x)).

Gradients are exact backpropagation; the ReLU subgradient at 0 is 0.
Parameter vectors are flattened W_1 row-major, then W_2, ..., W_L.
"""
import logging
import math
from typing import Callable, Literal, NamedTuple

import numpy as np

from src.core.errors import ConfigurationError, InputError, TrainingDivergenceError
from src.domain.models import InitScheme, StepSchedule, TrainMode
from src.domain.state import NetworkShape, NetworkState, ObservationLog, TrainConfig, unflatten

logger = logging.getLogger(__name__)

GradientPoint = Literal["anchor", "current"]
StepCallback = Callable[[int, float], None]

PARAMETER_ORDER = "W1 row-major, then W2, ..., WL"


class TheorySchedule(NamedTuple):
    lam: float
    learning_rate: float
    steps: int

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            learning_rate=self.learning_rate,
            lam=self.lam,
            mode=TrainMode.FULL_BATCH,
            schedule=StepSchedule.THEORY,
        )


def init_network(shape: NetworkShape, rng_seed, scheme: InitScheme | str = InitScheme.HE_THEORY) -> NetworkState:
    """Draw theta_0.

    he-theory: hidden N(0, 2/m), output layer zero, so h(x; theta_0) = 0.
    experiment: every layer N(0, 1/m).
    ntk-matched: hidden N(0, 2/m), output N(0, 1/m).
    """
    scheme = InitScheme(scheme)
    rng = np.random.default_rng(rng_seed)
    m = shape.width
    hidden_sd = math.sqrt((1.0 if scheme is InitScheme.EXPERIMENT else 2.0) / m)
    weights = [rng.normal(0.0, hidden_sd, size=s) for s in shape.layer_shapes[:-1]]
    if scheme is InitScheme.HE_THEORY:
        weights.append(np.zeros((1, m)))
    else:
        weights.append(rng.normal(0.0, math.sqrt(1.0 / m), size=(1, m)))
    return NetworkState(shape, tuple(weights), tuple(weights), scheme)


def _output_scale(net: NetworkState) -> float:
    return math.sqrt(net.shape.width) if net.scaled_output else 1.0


def _as_batch(net: NetworkState, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.shape.input_dim:
        raise InputError(f"expected inputs of dimension {net.shape.input_dim}, got shape {X.shape}")
    return X


def _as_vector(net: NetworkState, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.shape.input_dim,):
        raise InputError(f"expected a {net.shape.input_dim}-vector, got shape {x.shape}")
    return x


def _weights_at(net: NetworkState, at: GradientPoint):
    if at == "anchor":
        return net.anchor
    if at == "current":
        return net.weights
    raise InputError(f"unknown gradient point {at!r}")


def _hidden(weights, X):
    pre, post = [], [X]
    for W in weights[:-1]:
        z = post[-1] @ W.T
        pre.append(z)
        post.append(np.maximum(z, 0.0))
    return pre, post


def _accumulated_grads(weights, pre, post, cotangent, scale):
    """Sum over the batch of cotangent_i * dh(x_i)/dW_l, per layer."""
    L = len(weights)
    grads = [None] * L
    grads[-1] = scale * (cotangent @ post[-1])[None, :]
    delta = scale * cotangent[:, None] * weights[-1]
    for l in reversed(range(L - 1)):
        delta = delta * (pre[l] > 0)
        grads[l] = delta.T @ post[l]
        if l > 0:
            delta = delta @ weights[l]
    return grads


def forward_batch(net: NetworkState, X, at: GradientPoint = "current") -> np.ndarray:
    weights = _weights_at(net, at)
    _, post = _hidden(weights, _as_batch(net, X))
    return _output_scale(net) * (post[-1] @ weights[-1][0])


def forward(net: NetworkState, x) -> float:
    return float(forward_batch(net, _as_vector(net, x)[None, :])[0])


def param_gradients(net: NetworkState, X, at: GradientPoint = "current") -> np.ndarray:
    """Per-input gradients, shape (n, p)."""
    weights = _weights_at(net, at)
    X = _as_batch(net, X)
    scale = _output_scale(net)
    pre, post = _hidden(weights, X)
    n = X.shape[0]
    L = len(weights)
    blocks = [None] * L
    blocks[-1] = scale * post[-1]
    delta = np.broadcast_to(scale * weights[-1], (n, net.shape.width))
    for l in reversed(range(L - 1)):
        delta = delta * (pre[l] > 0)
        blocks[l] = (delta[:, :, None] * post[l][:, None, :]).reshape(n, -1)
        if l > 0:
            delta = delta @ weights[l]
    return np.concatenate(blocks, axis=1)


def param_gradient(net: NetworkState, x, at: GradientPoint = "current") -> np.ndarray:
    return param_gradients(net, _as_vector(net, x)[None, :], at)[0]


def hidden_norms(net: NetworkState, x) -> np.ndarray:
    """||h_l||_2 for every hidden layer at the current weights."""
    _, post = _hidden(net.weights, _as_vector(net, x)[None, :])
    return np.array([np.linalg.norm(a[0]) for a in post[1:]])


def _loss_and_grads(weights, anchor, X, y, lam, scale, data_weight):
    m = weights[-1].shape[1]
    pre, post = _hidden(weights, X)
    residual = scale * (post[-1] @ weights[-1][0]) - y
    diffs = [w - a for w, a in zip(weights, anchor)]
    value = 0.5 * data_weight * float(residual @ residual)
    value += 0.5 * m * lam * sum(float(np.vdot(d, d)) for d in diffs)
    grads = _accumulated_grads(weights, pre, post, data_weight * residual, scale)
    return value, [g + m * lam * d for g, d in zip(grads, diffs)]


def loss(net: NetworkState, log: ObservationLog, lam: float) -> float:
    """0.5 * sum (h(x_i) - y_i)^2 + 0.5 * m * lam * ||theta - theta_0||^2."""
    X = _as_batch(net, log.inputs)
    value, _ = _loss_and_grads(net.weights, net.anchor, X, log.targets, lam, _output_scale(net), 1.0)
    return value


def train(
    net: NetworkState,
    log: ObservationLog,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
    on_step: StepCallback | None = None,
) -> NetworkState:
    """Gradient descent on the anchored squared loss, starting from net's current weights.

    full-batch: J plain GD steps on the summed loss.
    minibatch: cfg.epochs passes of SGD over shuffled batches; each step uses the
    batch-mean squared error plus the full anchor penalty.
    on_step receives (step, loss before the update); full-batch mode also reports the loss at J.
    """
    if len(log) == 0:
        raise InputError("cannot train on an empty observation log")
    X = _as_batch(net, log.inputs)
    y = log.targets
    m = net.shape.width
    if cfg.schedule is StepSchedule.THEORY and cfg.learning_rate * m * cfg.lam >= 1.0:
        raise ConfigurationError(
            f"eta*m*lambda = {cfg.learning_rate * m * cfg.lam:.4g} must be < 1 under the theory schedule"
        )
    scale = _output_scale(net)
    weights = [w.copy() for w in net.weights]

    def descend(step, X_batch, y_batch, data_weight):
        value, grads = _loss_and_grads(weights, net.anchor, X_batch, y_batch, cfg.lam, scale, data_weight)
        if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergenceError(step)
        if on_step is not None:
            on_step(step, value)
        for w, g in zip(weights, grads):
            w -= cfg.learning_rate * g
        return value

    if cfg.mode is TrainMode.FULL_BATCH:
        if cfg.steps == 0:
            return net
        initial = descend(0, X, y, 1.0)
        for step in range(1, cfg.steps):
            descend(step, X, y, 1.0)
        final, _ = _loss_and_grads(weights, net.anchor, X, y, cfg.lam, scale, 1.0)
        if not math.isfinite(final):
            raise TrainingDivergenceError(cfg.steps)
        if on_step is not None:
            on_step(cfg.steps, final)
        logger.debug("full-batch GD: %d steps, loss %.6g -> %.6g", cfg.steps, initial, final)
    else:
        if cfg.epochs == 0:
            return net
        rng = rng if rng is not None else np.random.default_rng(0)
        n = len(log)
        step = 0
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                descend(step, X[idx], y[idx], 1.0 / idx.size)
                step += 1
        logger.debug("minibatch SGD: %d epochs, %d steps on %d points", cfg.epochs, step, n)
    return net.with_weights(weights)


def theory_schedule(horizon: int, depth: int, width: int, alpha: float) -> TheorySchedule:
    """lambda = 1 + 1/T, eta = (m lambda + m L T)^-1 and the matching number of GD steps J."""
    if horizon < 1 or not 0.0 < alpha < 1.0:
        raise ConfigurationError("need T >= 1 and alpha in (0, 1)")
    T, L, m = horizon, depth, width
    lam = 1.0 + 1.0 / T
    eta = 1.0 / (m * lam + m * L * T)
    inner = T ** 3 * L / lam * math.log(1.0 / alpha)
    steps = (1.0 + L * T / lam) * (1.0 + math.log(inner))
    return TheorySchedule(lam, eta, max(1, math.ceil(steps)))


def to_snapshot(net: NetworkState) -> dict:
    return {
        "shape": {"input_dim": net.shape.input_dim, "depth": net.shape.depth, "width": net.shape.width},
        "scheme": net.scheme.value,
        "scaled_output": net.scaled_output,
        "order": PARAMETER_ORDER,
        "weights": net.flat().tolist(),
        "anchor": net.anchor_flat().tolist(),
    }


def from_snapshot(snapshot: dict) -> NetworkState:
    shape = NetworkShape(**snapshot["shape"])
    weights = unflatten(np.asarray(snapshot["weights"], dtype=np.float64), shape)
    anchor = unflatten(np.asarray(snapshot["anchor"], dtype=np.float64), shape)
    return NetworkState(
        shape,
        tuple(weights),
        tuple(anchor),
        InitScheme(snapshot["scheme"]),
        bool(snapshot.get("scaled_output", True)),
    )
