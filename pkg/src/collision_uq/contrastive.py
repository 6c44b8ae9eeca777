"""Pairwise contrastive model: does a pair of inputs share a class?

Training pairs are drawn on the fly with equal weight on same-class and
different-class pairs, so the network learns the *balanced* same-class
probability. With uniform class priors that quantity is a monotone function
of the similarity Sim(x, x̃) = P(c = c̃ | x, x̃):

    balanced = (K - 1) s / ((K - 1) s + 1 - s)

and :meth:`ContrastiveModel.similarity` inverts it. For K = 2 the two
coincide.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import ModelStateError, UnusableClassError
from .mixture import Dataset, GaussianMixture, true_posterior
from .nn import FeedForwardNet, TrainConfig, softmax, train

SimilarityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _check_pairable(data: Dataset) -> np.ndarray:
    counts = data.class_counts()
    for k, c in enumerate(counts):
        if c < 2:
            raise UnusableClassError(f"class {k} has {c} member(s); pairs need at least 2", k)
    return counts


def balanced_pair_batches(
    data: Dataset, batch_size: int, seed: int, swap_order: bool = True
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless stream of ``(pairs, z)`` batches; ``pairs`` rows are ``[x, x̃]``.

    Each pair is same-class with probability ½ (uniform class, two distinct
    members) and otherwise different-class (uniform ordered class pair, one
    member of each).
    """
    _check_pairable(data)
    K = data.n_classes
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(data.labels == k) for k in range(K)]
    sizes = np.array([len(m) for m in by_class])
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    flat = np.concatenate(by_class)

    def draw(classes, exclude=None):
        pos = (rng.random(len(classes)) * (sizes[classes] - (exclude is not None))).astype(int)
        if exclude is not None:
            pos = pos + (pos >= exclude)
        return pos

    while True:
        z = (rng.random(batch_size) < 0.5).astype(int)
        ci = rng.integers(0, K, size=batch_size)
        shift = rng.integers(1, K, size=batch_size)
        cj = np.where(z == 1, ci, (ci + shift) % K)
        pi = draw(ci)
        pj = draw(cj)
        same = z == 1
        # second member of a same-class pair must differ from the first
        redraw = draw(ci[same], exclude=pi[same])
        pj[same] = redraw
        left = flat[offsets[ci] + pi]
        right = flat[offsets[cj] + pj]
        if swap_order:
            flip = rng.random(batch_size) < 0.5
            left, right = np.where(flip, right, left), np.where(flip, left, right)
        pairs = np.hstack([data.features[left], data.features[right]])
        yield pairs, z


def balanced_to_similarity(v, n_classes: int):
    """Map a balanced same-class probability to Sim under uniform priors."""
    v = np.asarray(v, dtype=float)
    return v / (n_classes - 1 - (n_classes - 2) * v)


def similarity_to_balanced(s, n_classes: int):
    s = np.asarray(s, dtype=float)
    return (n_classes - 1) * s / ((n_classes - 1) * s + 1 - s)


@dataclass
class ContrastiveModel:
    net: FeedForwardNet
    n_classes: int
    trained: bool = False
    metadata: dict = field(default_factory=dict)

    def _require_trained(self):
        if not self.trained:
            raise ModelStateError("contrastive model has not been trained")

    def raw_score(self, X, X_tilde) -> np.ndarray:
        """Same-class probability for the ordered pair (x, x̃), one network pass."""
        self._require_trained()
        X, Xt = np.atleast_2d(X), np.atleast_2d(X_tilde)
        return softmax(self.net.forward(np.hstack([X, Xt])))[:, 1]

    def balanced_score(self, X, X_tilde) -> np.ndarray:
        """Order-symmetrised balanced same-class probability."""
        return 0.5 * (self.raw_score(X, X_tilde) + self.raw_score(X_tilde, X))

    def similarity_batch(self, X, X_tilde) -> np.ndarray:
        return balanced_to_similarity(self.balanced_score(X, X_tilde), self.n_classes)

    def similarity(self, x, x_tilde):
        """Estimated Sim(x, x̃); exactly symmetric, in [0, 1]."""
        out = self.similarity_batch(x, x_tilde)
        return float(out[0]) if np.ndim(x) == 1 else out

    __call__ = similarity_batch

    def to_json(self) -> dict:
        return {
            "net": self.net.to_json(),
            "n_classes": self.n_classes,
            "trained": self.trained,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj) -> "ContrastiveModel":
        if isinstance(obj, (str, Path)):
            obj = json.loads(Path(obj).read_text())
        return cls(
            FeedForwardNet.from_json(obj["net"]),
            int(obj["n_classes"]),
            bool(obj.get("trained", True)),
            dict(obj.get("metadata", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def train_contrastive(
    data: Dataset,
    config: TrainConfig,
    hidden: list[int] = (128,) * 6,
    swap_order: bool = True,
) -> ContrastiveModel:
    """Fit the pair network on balanced pairs; one epoch shows ``len(data)`` pairs."""
    _check_pairable(data)
    net = FeedForwardNet.init([2 * data.dim, *hidden, 2], seed=config.seed)
    stream = balanced_pair_batches(data, config.batch_size, seed=config.seed + 1, swap_order=swap_order)
    n_batches = max(1, -(-len(data) // config.batch_size))

    def batches(epoch, rng):
        for _ in range(n_batches):
            yield next(stream)

    net, trace = train(net, batches, config)
    model = ContrastiveModel(net, data.n_classes, trained=True)
    model.metadata = {
        "seed": config.seed,
        "epochs": config.epochs,
        "loss_trace": trace,
        "final_pair_risk": empirical_pair_risk(
            model.balanced_score, data, "cross_entropy", max_pairs_per_cell=20_000, seed=config.seed
        ),
    }
    return model


def oracle_similarity(gm: GaussianMixture, X, X_tilde):
    """Ground-truth Sim: dot product of the true posteriors."""
    single = np.ndim(X) == 1
    out = np.sum(true_posterior(gm, np.atleast_2d(X)) * true_posterior(gm, np.atleast_2d(X_tilde)), axis=1)
    return float(out[0]) if single else out


def oracle_balanced_score(gm: GaussianMixture) -> SimilarityFn:
    """What a perfectly trained pair network outputs under the balanced risk."""
    return lambda X, Xt: similarity_to_balanced(oracle_similarity(gm, X, Xt), gm.n_classes)


def _pair_loss(p: np.ndarray, z: int, loss: str) -> np.ndarray:
    if loss == "zero_one":
        wrong = ((p > 0.5).astype(int) != z).astype(float)
        return np.where(p == 0.5, 0.5, wrong)
    if loss == "cross_entropy":
        p = np.clip(p, 1e-12, 1 - 1e-12)
        return -np.log(p) if z == 1 else -np.log1p(-p)
    raise ValueError(f"unknown loss {loss!r}")


def empirical_pair_risk(
    score: SimilarityFn,
    data: Dataset,
    loss: str = "cross_entropy",
    max_pairs_per_cell: int | None = None,
    seed: int = 0,
) -> float:
    """Balanced empirical pair risk over every ordered pair of the dataset.

    The mean loss over different-class cells and the mean over same-class
    cells (self-pairs excluded) are weighted ½ each, i.e. the expected loss
    under the balanced pair distribution. Each cell is normalised by its own
    size, so unequal class counts are handled. ``score(X, X̃)`` returns the
    predicted same-class probability; under the zero-one loss a score of
    exactly ½ is a coin flip and costs ½. Cells larger than
    ``max_pairs_per_cell`` are estimated from a uniform subsample.
    """
    counts = _check_pairable(data)
    K = data.n_classes
    members = [data.members(k) for k in range(K)]
    rng = np.random.default_rng(seed)
    diff_total, same_total = 0.0, 0.0
    for i in range(K):
        for j in range(K):
            A, B = members[i], members[j]
            if max_pairs_per_cell is not None and counts[i] * counts[j] > max_pairs_per_cell:
                a = rng.integers(0, counts[i], size=max_pairs_per_cell)
                b = rng.integers(0, counts[j] - (i == j), size=max_pairs_per_cell)
                if i == j:
                    b = b + (b >= a)
                left, right = A[a], B[b]
            else:
                left = np.repeat(A, len(B), axis=0)
                right = np.tile(B, (len(A), 1))
                if i == j:
                    keep = ~np.eye(len(A), dtype=bool).ravel()
                    left, right = left[keep], right[keep]
            cell = _pair_loss(score(left, right), int(i == j), loss).mean()
            if i == j:
                same_total += cell
            else:
                diff_total += cell
    return float(0.5 * diff_total / (K * (K - 1)) + 0.5 * same_total / K)
