"""Per-input posterior estimates from similarity scores.

The expected similarity of ``x`` to each class is linear in its posterior,
``q(x) = S y(x)``, so an estimate of ``S`` turns estimated similarities into
an estimated posterior by a linear solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import SingularMatrixError
from .matrix_core import (
    as_matrix,
    condition_estimate,
    is_strictly_diag_dominant,
    project_to_simplex,
    solve_linear,
)
from .mixture import Dataset

log = logging.getLogger(__name__)

SimilarityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
MAX_CONDITION = 1e8
DEFAULT_M = 200


@dataclass
class ComparisonSets:
    """Per-class reference points, taken from data the pair model never saw."""

    points: list[np.ndarray]

    def __post_init__(self):
        self.points = [np.atleast_2d(np.asarray(p, dtype=float)) for p in self.points]
        for k, p in enumerate(self.points):
            if p.shape[0] < 1:
                raise ValueError(f"comparison set for class {k} is empty")

    @property
    def n_classes(self) -> int:
        return len(self.points)

    @classmethod
    def from_dataset(cls, validation: Dataset, m: int = DEFAULT_M, seed: int = 0) -> "ComparisonSets":
        """Up to ``m`` points per class, drawn without replacement."""
        rng = np.random.default_rng(seed)
        sets = []
        for k in range(validation.n_classes):
            members = validation.members(k)
            if len(members) == 0:
                raise ValueError(f"validation split has no members of class {k}")
            take = min(m, len(members))
            sets.append(members[np.sort(rng.choice(len(members), size=take, replace=False))])
        return cls(sets)


@dataclass
class PosteriorEstimate:
    y_hat: np.ndarray
    raw_solution: np.ndarray
    q_hat: np.ndarray
    condition: float
    projection_distance: float
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "y_hat": self.y_hat.tolist(),
            "raw_solution": self.raw_solution.tolist(),
            "q_hat": self.q_hat.tolist(),
            "condition": self.condition,
            "projection_distance": self.projection_distance,
            "warnings": list(self.warnings),
        }


def expected_similarity_scores(similarity: SimilarityFn, X, sets: ComparisonSets) -> np.ndarray:
    """Mean similarity of each query to each class's comparison points.

    ``X`` may be one point (returns length K) or a batch (returns ``(n, K)``).
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    q = np.empty((X.shape[0], sets.n_classes))
    for k, P in enumerate(sets.points):
        left = np.repeat(X, len(P), axis=0)
        right = np.tile(P, (X.shape[0], 1))
        q[:, k] = np.asarray(similarity(left, right), dtype=float).reshape(X.shape[0], len(P)).mean(axis=1)
    return q[0] if single else q


def _check_system(S) -> tuple[np.ndarray, float, list[str]]:
    S = as_matrix(S, square=True)
    notes = []
    if not is_strictly_diag_dominant(S):
        msg = "collision matrix is not strictly diagonally dominant"
        log.warning(msg)
        notes.append(msg)
    cond = condition_estimate(S)
    if not cond <= MAX_CONDITION:
        raise SingularMatrixError(f"collision matrix condition estimate {cond:.3g} exceeds {MAX_CONDITION:g}")
    return S, cond, notes


def posterior_from_similarity(S, q) -> PosteriorEstimate:
    """Solve ``S y = q`` and clip-renormalise the solution onto the simplex."""
    S, cond, notes = _check_system(S)
    return _solve(S, q, cond, notes)


def _solve(S, q, cond, notes) -> PosteriorEstimate:
    q = np.asarray(q, dtype=float)
    raw = solve_linear(S, q)
    y = project_to_simplex(raw)
    return PosteriorEstimate(
        y_hat=y,
        raw_solution=raw,
        q_hat=q,
        condition=cond,
        projection_distance=float(np.abs(y - raw).sum()),
        warnings=list(notes),
    )


def estimate_posterior(similarity: SimilarityFn, S_hat, X, sets: ComparisonSets):
    """Similarity scores against the comparison sets, then the linear solve.

    Returns one PosteriorEstimate for a single point, a list for a batch.
    """
    q = expected_similarity_scores(similarity, X, sets)
    if q.ndim == 1:
        return posterior_from_similarity(S_hat, q)
    S, cond, notes = _check_system(S_hat)
    return [_solve(S, row, cond, notes) for row in q]


def posterior_matrix(estimates: list[PosteriorEstimate]) -> np.ndarray:
    return np.vstack([e.y_hat for e in estimates])
