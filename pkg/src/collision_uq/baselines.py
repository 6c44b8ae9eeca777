"""Comparison methods: plug-in collision matrices from ordinary classifiers.

The plug-in estimate averages a posterior estimate over each class's
training points. Posteriors come from a plain classifier, a temperature-
scaled one, or Monte Carlo dropout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mixture import Dataset
from .nn import FeedForwardNet, TrainConfig, array_batches, softmax, train

log = logging.getLogger(__name__)

PosteriorFn = Callable[[np.ndarray], np.ndarray]

DEFAULT_BINS = 15
DEFAULT_DROPOUT_PASSES = 30


def default_temperature_grid() -> np.ndarray:
    """51 log-spaced temperatures on [0.1, 10]; the middle one is exactly 1."""
    grid = np.logspace(-1.0, 1.0, 51)
    grid[25] = 1.0
    return grid


def train_classifier(
    data: Dataset,
    config: TrainConfig,
    hidden: list[int] = (128,) * 6,
    dropout: float = 0.0,
) -> tuple[FeedForwardNet, list[float]]:
    net = FeedForwardNet.init([data.dim, *hidden, data.n_classes], seed=config.seed, dropout=dropout)
    return train(net, array_batches(data.features, data.labels, config.batch_size), config)


def accuracy(probs: np.ndarray, labels) -> float:
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(labels)))


def ece(probs, labels, bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error with equal-width confidence bins.

    Confidence is the top-class probability; bin ``b`` holds confidences in
    ``(b/bins, (b+1)/bins]`` with zero placed in the first bin.
    """
    if bins < 1:
        raise ValueError("bins must be at least 1")
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.asarray(labels)
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(float)
    idx = np.clip(np.ceil(conf * bins).astype(int) - 1, 0, bins - 1)
    n = conf.size
    total = 0.0
    for b in range(bins):
        in_bin = idx == b
        if in_bin.any():
            total += in_bin.sum() / n * abs(conf[in_bin].mean() - correct[in_bin].mean())
    return float(total)


@dataclass
class CalibratedClassifier:
    net: FeedForwardNet
    temperature: float

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.net.forward(np.atleast_2d(X)) / self.temperature)

    __call__ = predict_proba


def fit_temperature(
    net: FeedForwardNet,
    validation: Dataset,
    grid=None,
    bins: int = DEFAULT_BINS,
    logits: np.ndarray | None = None,
) -> CalibratedClassifier:
    """Pick the grid temperature with the lowest validation ECE.

    Ties (within 1e-12) go to T = 1 if it is among them, otherwise to the
    smallest tied T. ``logits`` may be supplied to bypass the network.
    """
    grid = default_temperature_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("temperature grid is empty")
    if len(validation) == 0:
        raise ValueError("validation set is empty")
    z = net.forward(validation.features) if logits is None else np.asarray(logits, dtype=float)
    scores = np.array([ece(softmax(z / T), validation.labels, bins) for T in grid])
    tied = grid[scores <= scores.min() + 1e-12]
    best = 1.0 if np.any(tied == 1.0) else float(tied.min())
    return CalibratedClassifier(net, best)


def mc_dropout_posterior(net: FeedForwardNet, X, h: int = DEFAULT_DROPOUT_PASSES, seed: int = 0) -> np.ndarray:
    """Mean softmax over ``h`` forward passes with dropout left on."""
    if h < 1:
        raise ValueError("h must be at least 1")
    if not net.has_dropout:
        log.warning("network has no dropout; MC dropout reduces to a plain forward pass")
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(h):
        total = total + softmax(net.forward(X, dropout_active=True, seed=rng))
    return total / h


def plug_in_collision_matrix(posterior_fn: PosteriorFn, data: Dataset) -> np.ndarray:
    """Row ``i`` is the mean estimated posterior over the class-``i`` points."""
    K = data.n_classes
    S = np.zeros((K, K))
    for k in range(K):
        members = data.members(k)
        if len(members) == 0:
            raise ValueError(f"class {k} has no members")
        S[k] = np.asarray(posterior_fn(members), dtype=float).mean(axis=0)
    return S
