"""A small multilayer perceptron with hand-written backpropagation.

ReLU hidden layers, raw output scores (softmax is applied by callers), and
inverted dropout on hidden activations. Training is mini-batch gradient
descent on mean cross-entropy with optional momentum.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import DimensionError, TrainingDivergenceError

Batch = tuple[np.ndarray, np.ndarray]


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class FeedForwardNet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rates: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) < 1 or len(self.weights) != len(self.biases):
            raise ValueError("need one bias vector per weight matrix")
        for W, b, W_next in zip(self.weights, self.biases, self.weights[1:] + [None]):
            if b.shape != (W.shape[1],):
                raise DimensionError(f"bias of shape {b.shape} for weight {W.shape}")
            if W_next is not None and W_next.shape[0] != W.shape[1]:
                raise DimensionError("consecutive layer shapes do not chain")
        n_hidden = len(self.weights) - 1
        if not self.dropout_rates:
            self.dropout_rates = [0.0] * n_hidden
        if len(self.dropout_rates) != n_hidden:
            raise ValueError(f"{len(self.dropout_rates)} dropout rates for {n_hidden} hidden layers")
        if any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            raise ValueError("dropout rates must lie in [0, 1)")

    @classmethod
    def init(
        cls, layer_sizes: list[int], seed: int = 0, dropout: float | list[float] = 0.0
    ) -> "FeedForwardNet":
        """Glorot-uniform weights and zero biases from a seeded generator."""
        if len(layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        n_hidden = len(layer_sizes) - 2
        rates = [float(dropout)] * n_hidden if np.isscalar(dropout) else list(dropout)
        return cls(weights, biases, rates)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def has_dropout(self) -> bool:
        return any(r > 0 for r in self.dropout_rates)

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "FeedForwardNet":
        return FeedForwardNet(
            [W.copy() for W in self.weights], [b.copy() for b in self.biases], list(self.dropout_rates)
        )

    def _forward(self, X, dropout_active, rng):
        """Return output scores and the per-layer cache needed for backprop."""
        acts = [X]
        masks = []
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if i == last:
                return z, acts, masks
            h = np.maximum(z, 0.0)
            rate = self.dropout_rates[i]
            if dropout_active and rate > 0:
                mask = (rng.random(h.shape) >= rate) / (1.0 - rate)
                h = h * mask
            else:
                mask = None
            masks.append(mask)
            acts.append(h)

    def forward(self, x, dropout_active: bool = False, seed=None) -> np.ndarray:
        """Output scores for one input vector or a batch of row vectors."""
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.shape[1] != self.layer_sizes[0]:
            raise DimensionError(f"input width {X2.shape[1]}, network expects {self.layer_sizes[0]}")
        rng = _rng(seed) if dropout_active else None
        z, _, _ = self._forward(X2, dropout_active, rng)
        return z[0] if single else z

    def predict_proba(self, X, temperature: float = 1.0) -> np.ndarray:
        return softmax(self.forward(X) / temperature)

    # -- serialisation -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "dropout_rates": list(self.dropout_rates),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, obj) -> "FeedForwardNet":
        if isinstance(obj, (str, Path)):
            obj = json.loads(Path(obj).read_text())
        net = cls(
            [np.asarray(W, dtype=float) for W in obj["weights"]],
            [np.asarray(b, dtype=float) for b in obj["biases"]],
            list(obj.get("dropout_rates", [])),
        )
        if "layer_sizes" in obj and list(obj["layer_sizes"]) != net.layer_sizes:
            raise DimensionError("layer_sizes does not match stored weights")
        return net

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def _as_targets(targets, n_out: int) -> np.ndarray:
    t = np.asarray(targets)
    if t.ndim == 1:
        onehot = np.zeros((t.shape[0], n_out))
        onehot[np.arange(t.shape[0]), t.astype(int)] = 1.0
        return onehot
    if t.shape[1] != n_out:
        raise DimensionError(f"soft targets of width {t.shape[1]} for {n_out} outputs")
    return t.astype(float)


def loss_and_grad(
    net: FeedForwardNet, X, targets, dropout_active: bool = False, seed=None
) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over the batch and its exact parameter gradients.

    ``targets`` are class indices or rows of probabilities. Gradients come
    back in the order of :meth:`FeedForwardNet.parameters`.
    """
    X = np.asarray(X, dtype=float)
    T = _as_targets(targets, net.layer_sizes[-1])
    n = X.shape[0]
    rng = _rng(seed) if dropout_active else None
    z, acts, masks = net._forward(X, dropout_active, rng)
    logp = log_softmax(z)
    loss = float(-(T * logp).sum() / n)
    if not math.isfinite(loss):
        raise TrainingDivergenceError("cross-entropy loss is not finite")

    delta = (np.exp(logp) * T.sum(axis=1, keepdims=True) - T) / n
    grads: list[np.ndarray] = []
    for i in range(len(net.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(acts[i].T @ delta)
        if i > 0:
            delta = delta @ net.weights[i].T
            if masks[i - 1] is not None:
                delta = delta * masks[i - 1]
            delta = delta * (acts[i] > 0)
    grads.reverse()
    return loss, grads


def grad(net: FeedForwardNet, X, targets) -> list[np.ndarray]:
    return loss_and_grad(net, X, targets)[1]


def mean_loss(net: FeedForwardNet, X, targets) -> float:
    z = net.forward(np.asarray(X, dtype=float))
    T = _as_targets(targets, net.layer_sizes[-1])
    return float(-(T * log_softmax(z)).sum() / T.shape[0])


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 64
    learning_rate: float = 1e-2
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")

    def to_json(self) -> dict:
        return dict(vars(self))


BatchSource = Callable[[int, np.random.Generator], Iterable[Batch]]


def array_batches(X, y, batch_size: int) -> BatchSource:
    """Batch source that reshuffles ``(X, y)`` every epoch."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)

    def source(epoch: int, rng: np.random.Generator) -> Iterator[Batch]:
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], batch_size):
            idx = order[start : start + batch_size]
            yield X[idx], y[idx]

    return source


def train(
    net: FeedForwardNet, batches: BatchSource, config: TrainConfig
) -> tuple[FeedForwardNet, list[float]]:
    """Train a copy of ``net``; returns it with the mean training loss per epoch.

    ``batches(epoch, rng)`` yields ``(inputs, targets)`` pairs for one epoch.
    Dropout is active during training.
    """
    net = net.copy()
    rng = np.random.default_rng(config.seed)
    params = net.parameters()
    velocity = [np.zeros_like(p) for p in params]
    trace: list[float] = []
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for X, T in batches(epoch, rng):
            try:
                loss, grads = loss_and_grad(net, X, T, dropout_active=net.has_dropout, seed=rng)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(str(exc), trace) from None
            for p, g, v in zip(params, grads, velocity):
                v *= config.momentum
                v -= config.learning_rate * g
                p += v
            total += loss * len(X)
            count += len(X)
        trace.append(total / max(count, 1))
        if not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingDivergenceError("parameters became non-finite", trace)
    return net, trace


def trace_to_csv(trace: list[float], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "loss"])
    for i, loss in enumerate(trace):
        writer.writerow([i + 1, repr(float(loss))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
