"""A small trainable conditional velocity network.

Stands in for a large instruction-following editor at desk scale: a plain
two-hidden-layer tanh MLP mapping (flattened state, time, flattened source
image, one-hot instruction) to a flattened velocity, trained with
momentum-free SGD on the flow-matching regression loss. Everything is numpy
with hand-written backpropagation so the analytic gradient can be checked
against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .analytic import VOCAB_SIZE
from .flow import Condition, VelocityModel, interpolate
from .validation import as_grid, check_same_shape

__all__ = [
    "CFGVelocityModel",
    "HIDDEN_WIDTH",
    "ModelFormatError",
    "ToyVelocityNet",
    "ToyVelocityRegressor",
    "TrainConfig",
    "TrainingDivergedError",
    "backward",
    "cfg_velocity",
    "load_model",
    "save_model",
    "train",
]

HIDDEN_WIDTH = 128

_MAGIC = b"VFM1"


class ModelFormatError(ValueError):
    """A model file is malformed (bad magic, truncated, or inconsistent)."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; carries the iteration index."""

    def __init__(self, iteration: int, message: str):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    """SGD settings. All fields are explicit; there are no hidden defaults."""

    learning_rate: float
    batch_size: int
    iterations: int
    seed: int

    def validate(self) -> None:
        if not self.learning_rate >= 0.0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not self.batch_size > 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not self.iterations > 0:
            raise ValueError(f"iterations must be positive, got {self.iterations}")


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


class ToyVelocityNet(VelocityModel):
    """Two hidden softplus layers of width 128, linear output.

    Softplus keeps the map smooth (finite-difference gradient checks hold
    everywhere) without tanh's saturation, which matters for the large
    velocity magnitudes near the data end of the path. Hidden weights start
    at scaled Gaussians; the output layer starts at zero so an untrained
    network predicts zero velocity everywhere. The parameter count is a pure
    function of the grid shape and instruction vocabulary size.
    """

    def __init__(self, grid_shape, vocab_size: int = VOCAB_SIZE, seed: int = 0):
        grid_shape = tuple(int(s) for s in grid_shape)
        if len(grid_shape) != 3 or any(s <= 0 for s in grid_shape):
            raise ValueError(f"grid_shape must be three positive dimensions, got {grid_shape}")
        if vocab_size < 1:
            raise ValueError(f"vocab_size must be at least 1, got {vocab_size}")
        self.grid_shape = grid_shape
        self.vocab_size = int(vocab_size)
        self.state_size = int(np.prod(grid_shape))
        self.input_size = 2 * self.state_size + 1 + self.vocab_size

        rng = np.random.default_rng(seed)
        self.w1 = rng.normal(0.0, np.sqrt(2.0 / self.input_size), (self.input_size, HIDDEN_WIDTH))
        self.b1 = np.zeros(HIDDEN_WIDTH)
        self.w2 = rng.normal(0.0, np.sqrt(2.0 / HIDDEN_WIDTH), (HIDDEN_WIDTH, HIDDEN_WIDTH))
        self.b2 = np.zeros(HIDDEN_WIDTH)
        self.w3 = np.zeros((HIDDEN_WIDTH, self.state_size))
        self.b3 = np.zeros(self.state_size)

    # Parameter vector layout (also the on-disk order): w1, b1, w2, b2, w3, b3.
    @property
    def n_params(self) -> int:
        return sum(p.size for p in self._param_arrays())

    def _param_arrays(self):
        return (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self._param_arrays()])

    def from_vector(self, theta) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        offset = 0
        for p in self._param_arrays():
            p[...] = theta[offset : offset + p.size].reshape(p.shape)
            offset += p.size

    def _features(self, x_t, t, x_orig, instruction) -> np.ndarray:
        x_t = as_grid(x_t, "x_t")
        x_orig = as_grid(x_orig, "x_orig")
        if x_t.shape != self.grid_shape:
            raise ValueError(f"x_t has shape {x_t.shape}, expected {self.grid_shape}")
        check_same_shape(x_t, x_orig, ("x_t", "x_orig"))
        code = int(instruction)
        if not 0 <= code < self.vocab_size:
            raise ValueError(f"unknown instruction code {instruction}")
        onehot = np.zeros(self.vocab_size)
        onehot[code] = 1.0
        return np.concatenate([x_t.ravel(), [float(t)], x_orig.ravel(), onehot])

    def _forward_batch(self, inputs: np.ndarray):
        z1 = inputs @ self.w1 + self.b1
        h1 = _softplus(z1)
        z2 = h1 @ self.w2 + self.b2
        h2 = _softplus(z2)
        out = h2 @ self.w3 + self.b3
        return out, z1, h1, z2, h2

    def forward(self, x_t, t, x_orig, instruction) -> np.ndarray:
        """Predict the velocity for a single state."""
        u = self._features(x_t, t, x_orig, instruction)
        out = self._forward_batch(u[None, :])[0]
        return out[0].reshape(self.grid_shape)

    def velocity(self, x_t, t, condition: Condition | None = None) -> np.ndarray:
        if condition is None or condition.x_orig is None:
            raise ValueError("the toy network requires source-image conditioning")
        return self.forward(x_t, t, condition.x_orig, condition.instruction)


def _loss_and_grads(net: ToyVelocityNet, inputs: np.ndarray, targets: np.ndarray):
    out, z1, h1, z2, h2 = net._forward_batch(inputs)
    residual = out - targets
    batch = inputs.shape[0]
    loss = float(np.sum(residual * residual) / batch)
    g = (2.0 / batch) * residual
    gw3 = h2.T @ g
    gb3 = g.sum(axis=0)
    gh2 = g @ net.w3.T
    gz2 = gh2 * _sigmoid(z2)
    gw2 = h1.T @ gz2
    gb2 = gz2.sum(axis=0)
    gh1 = gz2 @ net.w2.T
    gz1 = gh1 * _sigmoid(z1)
    gw1 = inputs.T @ gz1
    gb1 = gz1.sum(axis=0)
    return loss, (gw1, gb1, gw2, gb2, gw3, gb3)


def _batch_matrices(net: ToyVelocityNet, batch, condition: Condition):
    if condition is None or condition.x_orig is None:
        raise ValueError("the toy network requires source-image conditioning")
    rows = []
    targets = []
    for sample in batch:
        x_t = interpolate(sample)
        rows.append(net._features(x_t, sample.t, condition.x_orig, condition.instruction))
        targets.append((sample.x1 - sample.x0).ravel())
    return np.stack(rows), np.stack(targets)


def backward(net: ToyVelocityNet, batch, condition: Condition) -> np.ndarray:
    """Exact gradient of the flow-matching loss with respect to all parameters.

    Matches :func:`flowsteer.flow.fm_loss` on the same batch and condition;
    returned flat in the parameter-vector order.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("batch must contain at least one sample")
    inputs, targets = _batch_matrices(net, batch, condition)
    _, grads = _loss_and_grads(net, inputs, targets)
    return np.concatenate([g.ravel() for g in grads])


def train(net: ToyVelocityNet, tasks, config: TrainConfig):
    """SGD on the flow-matching loss over synthetic edit tasks.

    Each batch row draws a task uniformly and then either the null pair
    (data endpoint = source image, instruction code 0) or an edit pair
    conditioned on the task's instruction. Edit pairs use a data endpoint at
    an unlabeled intensity, ``x_orig + u * (x_edit - x_orig)`` with ``u``
    uniform on [0, 1]: the instruction never encodes how strong the edit is,
    so the conditional data distribution spans the whole intensity range and
    the sampler's early steps are what commit to one. Noise is fresh
    standard normal per row; time is uniform on [0, 1). Returns the mutated
    network and the per-iteration loss curve.
    """
    config.validate()
    tasks = list(tasks)
    if not tasks:
        raise ValueError("tasks must contain at least one entry")
    for task in tasks:
        if task.shape != net.grid_shape:
            raise ValueError(f"task {task.id} has shape {task.shape}, expected {net.grid_shape}")

    rng = np.random.default_rng(config.seed)
    state = net.state_size
    orig_flat = np.stack([t.x_orig.ravel() for t in tasks])
    edit_flat = np.stack([t.x_edit.ravel() for t in tasks])
    codes = np.array([t.instruction for t in tasks])

    curve = np.empty(config.iterations)
    b = config.batch_size
    for iteration in range(config.iterations):
        picks = rng.integers(0, len(tasks), size=b)
        use_null = rng.random(b) < 0.5
        intensity = rng.random(b)
        x1 = rng.standard_normal((b, state))
        ts = rng.random(b)

        intensity = np.where(use_null, 0.0, intensity)
        x0 = orig_flat[picks] + intensity[:, None] * (edit_flat[picks] - orig_flat[picks])
        batch_codes = np.where(use_null, 0, codes[picks])
        x_t = (1.0 - ts)[:, None] * x0 + ts[:, None] * x1
        targets = x1 - x0

        onehot = np.zeros((b, net.vocab_size))
        onehot[np.arange(b), batch_codes] = 1.0
        inputs = np.concatenate([x_t, ts[:, None], orig_flat[picks], onehot], axis=1)

        loss, grads = _loss_and_grads(net, inputs, targets)
        if not np.isfinite(loss):
            raise TrainingDivergedError(iteration, f"non-finite loss at iteration {iteration}")
        curve[iteration] = loss
        for param, grad in zip(net._param_arrays(), grads):
            param -= config.learning_rate * grad
    return net, curve


def cfg_velocity(net: ToyVelocityNet, x_t, t, x_orig, instruction, scale: float) -> np.ndarray:
    """Classifier-free-guidance style extrapolation from the null condition.

        v = v_null + scale * (v_cond - v_null)

    ``scale = 0`` returns the null prediction, ``scale = 1`` the conditional
    one; larger scales are the naive edit-strength baseline.
    """
    v_null = net.forward(x_t, t, x_orig, 0)
    v_cond = net.forward(x_t, t, x_orig, instruction)
    return v_null + float(scale) * (v_cond - v_null)


@dataclass(frozen=True)
class CFGVelocityModel(VelocityModel):
    """Velocity model applying a guidance scale around the null condition."""

    net: ToyVelocityNet
    scale: float

    def velocity(self, x_t, t, condition: Condition | None = None):
        if condition is None or condition.x_orig is None:
            raise ValueError("the CFG baseline requires source-image conditioning")
        return cfg_velocity(self.net, x_t, t, condition.x_orig, condition.instruction, self.scale)


def save_model(net: ToyVelocityNet, path) -> None:
    """Write magic, u32 little-endian header, then float32 parameters.

    Header fields: channels, height, width, vocab size, and both hidden
    widths. Parameters follow in declaration order.
    """
    header = struct.pack(
        "<6I",
        net.grid_shape[0],
        net.grid_shape[1],
        net.grid_shape[2],
        net.vocab_size,
        HIDDEN_WIDTH,
        HIDDEN_WIDTH,
    )
    payload = net.to_vector().astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(header)
        fh.write(payload)


def load_model(path) -> ToyVelocityNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != _MAGIC:
        raise ModelFormatError(f"{path}: bad magic bytes")
    if len(blob) < 4 + 24:
        raise ModelFormatError(f"{path}: truncated header")
    channels, height, width, vocab, hidden1, hidden2 = struct.unpack("<6I", blob[4:28])
    if hidden1 != HIDDEN_WIDTH or hidden2 != HIDDEN_WIDTH:
        raise ModelFormatError(
            f"{path}: hidden widths {hidden1}x{hidden2} unsupported, expected "
            f"{HIDDEN_WIDTH}x{HIDDEN_WIDTH}"
        )
    net = ToyVelocityNet((channels, height, width), vocab_size=vocab, seed=0)
    expected = net.n_params * 4
    payload = blob[28:]
    if len(payload) != expected:
        raise ModelFormatError(
            f"{path}: parameter payload has {len(payload)} bytes, header implies {expected}"
        )
    theta = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    net.from_vector(theta)
    return net


class ToyVelocityRegressor(BaseEstimator):
    """sklearn-style estimator that fits the toy network on edit tasks.

    After ``fit`` the estimator itself is a velocity model (``velocity``
    delegates to the trained network), so it plugs directly into the
    intervention sampler.
    """

    def __init__(
        self,
        grid_shape=(1, 16, 16),
        vocab_size: int = VOCAB_SIZE,
        learning_rate: float = 0.002,
        batch_size: int = 32,
        iterations: int = 4000,
        seed: int = 0,
    ):
        self.grid_shape = grid_shape
        self.vocab_size = vocab_size
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.iterations = iterations
        self.seed = seed

    def fit(self, X, y=None):
        """Train on a sequence of :class:`EditTask`; ``y`` is ignored."""
        net = ToyVelocityNet(self.grid_shape, vocab_size=self.vocab_size, seed=self.seed)
        config = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            iterations=self.iterations,
            seed=self.seed,
        )
        self.net_, self.loss_curve_ = train(net, X, config)
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise RuntimeError("this ToyVelocityRegressor instance is not fitted yet")

    def predict(self, x_t, t, x_orig, instruction) -> np.ndarray:
        self._check_fitted()
        return self.net_.forward(x_t, t, x_orig, instruction)

    def velocity(self, x_t, t, condition: Condition | None = None) -> np.ndarray:
        self._check_fitted()
        return self.net_.velocity(x_t, t, condition)
