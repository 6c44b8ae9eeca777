"""Gaussian-mixture ground truth: sampling, exact posteriors, and Monte Carlo
estimates of the collision matrix and error rates.

All class densities share the covariance ``covariance_scale * I``. Densities
are handled in log space so that 20-dimensional mixtures never underflow.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp, ndtr

from .errors import DimensionError, QuadratureError
from .matrix_core import as_matrix

MIN_MC_SAMPLES = 10_000
DEFAULT_CHUNK = 50_000


@dataclass(frozen=True)
class GaussianMixture:
    means: np.ndarray
    covariance_scale: float = 1.0
    priors: np.ndarray | None = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        if means.shape[0] < 2:
            raise ValueError("a mixture needs at least two classes")
        if not np.all(np.isfinite(means)):
            raise ValueError("means must be finite")
        if not self.covariance_scale > 0:
            raise ValueError("covariance_scale must be positive")
        K = means.shape[0]
        priors = np.full(K, 1.0 / K) if self.priors is None else np.asarray(self.priors, float)
        if priors.shape != (K,):
            raise DimensionError(f"{priors.size} priors for {K} classes")
        if np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-9:
            raise ValueError("priors must lie on the probability simplex")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "covariance_scale", float(self.covariance_scale))

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def has_uniform_priors(self) -> bool:
        return bool(np.allclose(self.priors, 1.0 / self.n_classes, atol=1e-12))

    def log_densities(self, X) -> np.ndarray:
        """``(n, K)`` array of log f_k(x)."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.dim:
            raise DimensionError(f"points of dimension {X.shape[1]}, mixture has {self.dim}")
        var = self.covariance_scale
        sq = (
            np.sum(X**2, axis=1)[:, None]
            - 2.0 * X @ self.means.T
            + np.sum(self.means**2, axis=1)[None, :]
        )
        sq = np.maximum(sq, 0.0)
        return -0.5 * sq / var - 0.5 * self.dim * math.log(2 * math.pi * var)

    def to_json(self) -> dict:
        return {
            "K": self.n_classes,
            "d": self.dim,
            "means": self.means.tolist(),
            "covariance_scale": self.covariance_scale,
            "priors": self.priors.tolist(),
        }

    @classmethod
    def from_json(cls, obj) -> "GaussianMixture":
        if isinstance(obj, (str, Path)):
            obj = json.loads(Path(obj).read_text())
        gm = cls(
            means=obj["means"],
            covariance_scale=obj.get("covariance_scale", 1.0),
            priors=obj.get("priors"),
        )
        if "K" in obj and obj["K"] != gm.n_classes:
            raise DimensionError(f"K={obj['K']} but {gm.n_classes} means given")
        if "d" in obj and obj["d"] != gm.dim:
            raise DimensionError(f"d={obj['d']} but means have dimension {gm.dim}")
        return gm


# Means copied from the synthetic experiment description (identity covariance).
_SCENARIO_A = {
    3: [0.25, -0.25, 1.25],
    4: [-0.25, 0.25, 0.75, 2.5],
    5: [-0.25, 0.25, 0.75, 2.5, -1.0],
}
_SCENARIO_B_MULTIPLIERS = [-3.0, -1.0, 1.0, 5.0, 10.0]
SCENARIO_B_BETAS = (0.15, 0.25, 0.35)


def scenario_a(K: int = 3) -> GaussianMixture:
    if K not in _SCENARIO_A:
        raise ValueError(f"scenario A is defined for K in {sorted(_SCENARIO_A)}, got {K}")
    return GaussianMixture(np.outer(_SCENARIO_A[K], np.ones(4)))


def scenario_b(beta: float = 0.25) -> GaussianMixture:
    return GaussianMixture(np.outer(np.multiply(_SCENARIO_B_MULTIPLIERS, beta), np.ones(20)))


def scenario_c() -> GaussianMixture:
    """Same mixture as the highest-overlap scenario B setting."""
    return scenario_b(min(SCENARIO_B_BETAS))


@dataclass
class Dataset:
    """Labelled feature vectors; labels are 0-based class indices."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def members(self, k: int) -> np.ndarray:
        return self.features[self.labels == k]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes, dict(self.metadata))

    def split(self, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> list["Dataset"]:
        """Stratified random split; each class is divided by ``fractions``."""
        fractions = np.asarray(fractions, dtype=float)
        if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")
        rng = np.random.default_rng(seed)
        parts: list[list[int]] = [[] for _ in fractions]
        for k in range(self.n_classes):
            idx = rng.permutation(np.flatnonzero(self.labels == k))
            cuts = np.round(np.cumsum(fractions)[:-1] * idx.size).astype(int)
            for p, chunk in enumerate(np.split(idx, cuts)):
                parts[p].extend(chunk.tolist())
        return [self.subset(np.sort(np.asarray(p, dtype=int))) for p in parts]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"f_{j + 1}" for j in range(self.dim)] + ["label"])
        for x, c in zip(self.features, self.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(c)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source: str | Path, n_classes: int | None = None) -> "Dataset":
        """Read the ``f_1..f_d,label`` layout written by :meth:`to_csv`."""
        text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[-1] != "label":
            raise ValueError("last CSV column must be 'label'")
        features = np.array([[float(v) for v in r[:-1]] for r in body])
        labels = np.array([int(r[-1]) for r in body])
        K = n_classes if n_classes is not None else int(labels.max()) + 1
        return cls(features.reshape(len(body), len(header) - 1), labels, K)


def sample(gm: GaussianMixture, n_per_class: int, seed: int) -> Dataset:
    """Draw exactly ``n_per_class`` points from every class density."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    rng = np.random.default_rng(seed)
    sd = math.sqrt(gm.covariance_scale)
    feats = [
        gm.means[k] + sd * rng.standard_normal((n_per_class, gm.dim))
        for k in range(gm.n_classes)
    ]
    labels = np.repeat(np.arange(gm.n_classes), n_per_class)
    return Dataset(np.vstack(feats), labels, gm.n_classes)


def true_posterior(gm: GaussianMixture, X) -> np.ndarray:
    """Posterior class probabilities; a single point gives a length-K vector."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    logp = gm.log_densities(X) + np.log(np.where(gm.priors > 0, gm.priors, 1.0))
    logp = np.where(gm.priors > 0, logp, -np.inf)
    post = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    return post[0] if single else post


def _chunk_sizes(total: int, chunk: int) -> list[int]:
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes


def _chunk_rng(seed: int, k: int, chunk_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, k, chunk_index])


def _class_draws(gm, k, mc_samples, seed, chunk):
    sd = math.sqrt(gm.covariance_scale)
    for c, size in enumerate(_chunk_sizes(mc_samples, chunk)):
        rng = _chunk_rng(seed, k, c)
        yield gm.means[k] + sd * rng.standard_normal((size, gm.dim))


def true_collision_matrix(
    gm: GaussianMixture, mc_samples: int = 100_000, seed: int = 0, chunk: int = DEFAULT_CHUNK
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo collision matrix and per-entry standard errors.

    Row ``i`` is the mean posterior over ``mc_samples`` draws from class ``i``.
    Chunks use generators seeded by ``(seed, class, chunk_index)``, so the
    result is reproducible for a fixed ``(seed, chunk)``.
    """
    if mc_samples < MIN_MC_SAMPLES:
        raise ValueError(f"mc_samples must be at least {MIN_MC_SAMPLES}")
    K = gm.n_classes
    S = np.zeros((K, K))
    se = np.zeros((K, K))
    for i in range(K):
        total = np.zeros(K)
        total_sq = np.zeros(K)
        for X in _class_draws(gm, i, mc_samples, seed, chunk):
            post = true_posterior(gm, X)
            total += post.sum(axis=0)
            total_sq += (post**2).sum(axis=0)
        mean = total / mc_samples
        var = np.maximum(total_sq / mc_samples - mean**2, 0.0)
        S[i] = mean
        se[i] = np.sqrt(var / (mc_samples - 1))
    return S, se


def bayes_error_rate(
    gm: GaussianMixture, mc_samples: int = 100_000, seed: int = 0, chunk: int = DEFAULT_CHUNK
) -> tuple[float, float]:
    """Error of the argmax-posterior classifier with its standard error."""
    if mc_samples < MIN_MC_SAMPLES:
        raise ValueError(f"mc_samples must be at least {MIN_MC_SAMPLES}")
    errors = np.zeros(gm.n_classes)
    for k in range(gm.n_classes):
        wrong = 0
        for X in _class_draws(gm, k, mc_samples, seed + 7919, chunk):
            wrong += int(np.sum(np.argmax(true_posterior(gm, X), axis=1) != k))
        errors[k] = wrong / mc_samples
    ber = float(gm.priors @ errors)
    se = float(np.sqrt(np.sum(gm.priors**2 * errors * (1 - errors) / mc_samples)))
    return ber, se


def simulate_pbc_error(gm: GaussianMixture, n_draws: int, seed: int) -> tuple[float, float]:
    """Empirical error of a classifier that samples its label from the posterior.

    Classes are drawn from the priors, so the returned standard error is the
    plain binomial one.
    """
    rng = np.random.default_rng(seed)
    c = rng.choice(gm.n_classes, size=n_draws, p=gm.priors)
    X = gm.means[c] + math.sqrt(gm.covariance_scale) * rng.standard_normal((n_draws, gm.dim))
    post = true_posterior(gm, X)
    u = rng.random(n_draws)[:, None]
    predicted = np.minimum((np.cumsum(post, axis=1) < u).sum(axis=1), gm.n_classes - 1)
    rate = float(np.mean(predicted != c))
    return rate, math.sqrt(rate * (1 - rate) / n_draws)


def pber_from_s(S, priors) -> float:
    """Error rate of the probabilistic Bayes classifier, 1 - sum_k pi_k S_kk."""
    S = as_matrix(S, square=True)
    priors = np.asarray(priors, dtype=float)
    if priors.shape != (S.shape[0],):
        raise DimensionError(f"{priors.size} priors for a {S.shape[0]}x{S.shape[0]} matrix")
    return float(1.0 - priors @ np.diag(S))


# -- one-dimensional divergences -------------------------------------------


def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-10,
    max_depth: int = 50,
    initial_panels: int = 64,
) -> float:
    """Adaptive Simpson quadrature with Richardson correction.

    The interval is first cut into ``initial_panels`` panels so narrow peaks
    are not missed; each panel receives a share of ``tol`` proportional to
    its width.
    """
    edges = np.linspace(a, b, initial_panels + 1)
    total = 0.0
    worst_excess = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        flo, fhi = f(lo), f(hi)
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        whole = (hi - lo) / 6.0 * (flo + 4 * fmid + fhi)
        stack = [(lo, hi, flo, fmid, fhi, whole, tol * (hi - lo) / (b - a), 0)]
        while stack:
            x0, x1, f0, fm, f1, whole, eps, depth = stack.pop()
            m = 0.5 * (x0 + x1)
            lm, rm = 0.5 * (x0 + m), 0.5 * (m + x1)
            flm, frm = f(lm), f(rm)
            left = (m - x0) / 6.0 * (f0 + 4 * flm + fm)
            right = (x1 - m) / 6.0 * (fm + 4 * frm + f1)
            delta = left + right - whole
            if abs(delta) <= 15 * eps:
                total += left + right + delta / 15.0
            elif depth >= max_depth:
                worst_excess = max(worst_excess, abs(delta) / 15.0)
                total += left + right + delta / 15.0
            else:
                stack.append((x0, m, f0, flm, fm, left, eps / 2, depth + 1))
                stack.append((m, x1, fm, frm, f1, right, eps / 2, depth + 1))
    if worst_excess > 0:
        raise QuadratureError(
            f"adaptive Simpson did not reach tolerance {tol:g}", achieved_tolerance=worst_excess
        )
    return total


def _normal_logpdf(x: float, mu: float, var: float) -> float:
    return -0.5 * (x - mu) ** 2 / var - 0.5 * math.log(2 * math.pi * var)


def collision_divergence_logdensities(
    logf1: Callable[[float], float],
    logf2: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-10,
) -> float:
    """1 - ∫ 2 f1 f2 / (f1 + f2) over [lo, hi], clamped to [0, 1]."""

    def integrand(x):
        l1, l2 = logf1(x), logf2(x)
        return 2.0 * math.exp(l1 + l2 - float(np.logaddexp(l1, l2)))

    value = 1.0 - adaptive_simpson(integrand, lo, hi, tol=tol)
    return float(min(1.0, max(0.0, value)))


def collision_divergence(gm: GaussianMixture, tol: float = 1e-10) -> float:
    """Collision divergence between the two components of a 1-D mixture.

    Priors are ignored: the divergence is defined for the equal-prior case.
    """
    if gm.n_classes != 2 or gm.dim != 1:
        raise DimensionError("collision divergence needs a two-class, one-dimensional mixture")
    m1, m2 = float(gm.means[0, 0]), float(gm.means[1, 0])
    if m1 == m2:
        return 0.0
    var = gm.covariance_scale
    sd = math.sqrt(var)
    lo = min(m1, m2) - 10 * sd
    hi = max(m1, m2) + 10 * sd
    return collision_divergence_logdensities(
        lambda x: _normal_logpdf(x, m1, var), lambda x: _normal_logpdf(x, m2, var), lo, hi, tol
    )


def gaussian_collision_divergence(mu: float, tol: float = 1e-10) -> float:
    """Collision divergence between N(mu, 1) and N(-mu, 1)."""
    return collision_divergence(GaussianMixture([[mu], [-mu]]), tol=tol)


def reference_divergences(mu: float) -> tuple[float, float, float]:
    """Closed-form TVD, squared Hellinger and KL between N(mu, 1) and N(-mu, 1)."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    tvd = 2.0 * float(ndtr(mu)) - 1.0
    hellinger_sq = -math.expm1(-0.5 * mu * mu)
    kl = 2.0 * mu * mu
    return tvd, hellinger_sq, kl


def reference_divergences_quadrature(mu: float, tol: float = 1e-11) -> tuple[float, float, float]:
    """The same three divergences from their defining integrals."""
    lo, hi = -mu - 12.0, mu + 12.0

    def f(x, m):
        return math.exp(_normal_logpdf(x, m, 1.0))

    tvd = 0.5 * adaptive_simpson(lambda x: abs(f(x, mu) - f(x, -mu)), lo, hi, tol)
    bc = adaptive_simpson(lambda x: math.sqrt(f(x, mu) * f(x, -mu)), lo, hi, tol)
    kl = adaptive_simpson(
        lambda x: f(x, mu) * (_normal_logpdf(x, mu, 1.0) - _normal_logpdf(x, -mu, 1.0)),
        lo,
        hi,
        tol,
    )
    return tvd, 1.0 - bc, kl
