"""Small feedforward network (ReLU hidden layers, linear output) trained with Adam.

The trainer mirrors a plain Keras setup: MSE loss, mini-batches reshuffled
every epoch, a held-out validation split, and a reduce-on-plateau schedule
that halves the learning rate after ``plateau_patience`` epochs without a
validation improvement. The model of the final epoch is returned.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from coldstart import rng as _rng
from coldstart.errors import MlpDivergenceError

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
MIN_IMPROVEMENT = 1e-8


@dataclass(frozen=True)
class MlpConfig:
    layer_dims: tuple[int, ...]
    epochs: int = 500
    batch_size: int = 500
    lr_init: float = 1e-3
    plateau_patience: int = 50
    lr_halving: bool = True
    validation_fraction: float = 0.2
    seed: int = 0
    standardize: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(v) for v in self.layer_dims))
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError("layer_dims needs an input and an output size, all positive")
        if not self.lr_init > 0:
            raise ValueError("lr_init must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.plateau_patience < 1:
            raise ValueError("epochs, batch_size and plateau_patience must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # layer l maps (.., in_l) -> (.., out_l) via x @ W + b
    biases: list[np.ndarray]
    # Optional affine standardization applied outside the network.
    x_shift: np.ndarray | None = field(default=None, repr=False)
    x_scale: np.ndarray | None = field(default=None, repr=False)
    y_shift: np.ndarray | None = field(default=None, repr=False)
    y_scale: np.ndarray | None = field(default=None, repr=False)
    history: dict[str, list[float]] = field(default_factory=dict, repr=False)

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)


def _net(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=model.weights[0].dtype)
    if x.shape[-1] != model.weights[0].shape[0]:
        raise ValueError(f"input has dimension {x.shape[-1]}, network expects {model.weights[0].shape[0]}")
    if model.x_shift is not None:
        x = (x - model.x_shift) / model.x_scale
    y = _net(model.weights, model.biases, x)
    if model.y_shift is not None:
        y = y * model.y_scale + model.y_shift
    return y


def loss_and_gradients(
    weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean squared error over all entries and its gradients by backpropagation."""
    acts = [x]
    pre = []
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    diff = h - y
    loss = float(np.mean(diff * diff))
    delta = (2.0 / diff.size) * diff
    gw: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    for i in range(last, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (pre[i - 1] > 0)
    return loss, gw, gb


def init_params(layer_dims: Sequence[int], gen: np.random.Generator, dtype=np.float64):
    """He-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        lim = np.sqrt(6.0 / fan_in)
        weights.append(gen.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return weights, biases


def _affine_stats(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shift = a.mean(axis=0)
    scale = a.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return shift, scale


def train(config: MlpConfig, inputs: np.ndarray, targets: np.ndarray) -> MlpModel:
    dtype = np.dtype(config.dtype)
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("inputs must be (n, p) and targets (n, q) with matching n")
    if x.shape[1] != config.layer_dims[0] or y.shape[1] != config.layer_dims[-1]:
        raise ValueError(f"data shapes {x.shape}, {y.shape} do not match layer_dims {config.layer_dims}")

    gen = _rng.substream(config.seed, _rng.MLP)
    n = x.shape[0]
    perm = gen.permutation(n)
    n_val = int(np.floor(config.validation_fraction * n))
    if n - n_val < 1:
        raise ValueError("no training rows left after the validation split")
    tr_idx, val_idx = perm[: n - n_val], perm[n - n_val :]

    model = MlpModel(*init_params(config.layer_dims, gen, dtype))
    if config.standardize:
        model.x_shift, model.x_scale = (a.astype(dtype) for a in _affine_stats(x[tr_idx]))
        model.y_shift, model.y_scale = (a.astype(dtype) for a in _affine_stats(y[tr_idx]))
        x = (x - model.x_shift) / model.x_scale
        y = (y - model.y_shift) / model.y_scale
    x = x.astype(dtype)
    y = y.astype(dtype)
    x_tr, y_tr = x[tr_idx], y[tr_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    lr = config.lr_init
    best = np.inf
    wait = 0
    t = 0
    hist: dict[str, list[float]] = {"train_loss": [], "val_loss": [], "lr": []}
    batch = min(config.batch_size, len(tr_idx))
    n_layers = len(model.weights)

    for epoch in range(config.epochs):
        order = gen.permutation(len(tr_idx))
        total = 0.0
        for start in range(0, len(order), batch):
            rows = order[start : start + batch]
            loss, gw, gb = loss_and_gradients(model.weights, model.biases, x_tr[rows], y_tr[rows])
            if not np.isfinite(loss):
                raise MlpDivergenceError(epoch)
            total += loss * len(rows)
            t += 1
            c1 = 1.0 - ADAM_BETA1**t
            c2 = 1.0 - ADAM_BETA2**t
            for j, g in enumerate(gw + gb):
                m1[j] *= ADAM_BETA1
                m1[j] += (1.0 - ADAM_BETA1) * g
                m2[j] *= ADAM_BETA2
                m2[j] += (1.0 - ADAM_BETA2) * (g * g)
                p = model.weights[j] if j < n_layers else model.biases[j - n_layers]
                p -= (lr / c1) * m1[j] / (np.sqrt(m2[j] / c2) + ADAM_EPS)
        train_loss = total / len(order)
        if n_val:
            d = _net(model.weights, model.biases, x_val) - y_val
            monitor = float(np.mean(d * d))
        else:
            monitor = train_loss
        if not (np.isfinite(train_loss) and np.isfinite(monitor)):
            raise MlpDivergenceError(epoch)
        hist["train_loss"].append(train_loss)
        hist["val_loss"].append(monitor)
        hist["lr"].append(lr)
        if monitor < best - MIN_IMPROVEMENT:
            best = monitor
            wait = 0
        else:
            wait += 1
            if config.lr_halving and wait >= config.plateau_patience:
                lr *= 0.5
                wait = 0
                log.debug("epoch %d: plateau, learning rate -> %g", epoch, lr)
    model.history = hist
    return model
