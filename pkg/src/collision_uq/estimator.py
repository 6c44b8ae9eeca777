"""Collision-matrix estimation from pairwise similarities.

Part 1 averages a similarity function over class-pair cells to estimate the
Gramian ``G = S Sᵀ``. Part 2 recovers ``S`` from ``G`` by gradient descent on

    ‖S Sᵀ - G‖²_F + λ (‖S 1 - 1‖₁ - Σ_ij min(S_ij, 0))

starting from the identity.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, NonConvergenceError
from .matrix_core import as_matrix, is_strictly_diag_dominant, project_rows_to_simplex
from .mixture import Dataset

log = logging.getLogger(__name__)

SimilarityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class GramianEstimate:
    G: np.ndarray
    pair_counts: np.ndarray
    stderr: np.ndarray

    def to_json(self) -> dict:
        return {
            "G": self.G.tolist(),
            "pair_counts": self.pair_counts.tolist(),
            "stderr": self.stderr.tolist(),
        }


def estimate_gramian(
    similarity: SimilarityFn,
    data: Dataset,
    m_per_cell: int = 10_000,
    seed: int = 0,
    batch: int = 65_536,
) -> GramianEstimate:
    """Average similarity over pairs drawn from each class-pair cell.

    A cell uses every pair when ``m_per_cell`` is at least its size, and
    otherwise ``m_per_cell`` pairs drawn uniformly with replacement from a
    generator seeded by ``(seed, i, j)``. The standard errors describe the
    pair-sampling noise of the cell mean. The result is symmetrised.
    """
    K = data.n_classes
    members = [data.members(k) for k in range(K)]
    for k, M in enumerate(members):
        if len(M) == 0:
            raise ValueError(f"class {k} has no members")
    raw = np.zeros((K, K))
    var = np.zeros((K, K))
    counts = np.zeros((K, K), dtype=int)
    for i in range(K):
        for j in range(K):
            A, B = members[i], members[j]
            if m_per_cell >= len(A) * len(B):
                a = np.repeat(np.arange(len(A)), len(B))
                b = np.tile(np.arange(len(B)), len(A))
            else:
                rng = np.random.default_rng([seed, i, j])
                a = rng.integers(0, len(A), size=m_per_cell)
                b = rng.integers(0, len(B), size=m_per_cell)
            values = np.concatenate(
                [
                    np.asarray(similarity(A[a[s : s + batch]], B[b[s : s + batch]]), dtype=float)
                    for s in range(0, len(a), batch)
                ]
            )
            raw[i, j] = values.mean()
            counts[i, j] = values.size
            var[i, j] = values.var(ddof=1) / values.size if values.size > 1 else 0.0
    G = 0.5 * (raw + raw.T)
    se = 0.5 * np.sqrt(var + var.T)
    np.fill_diagonal(se, np.sqrt(np.diag(var)))
    return GramianEstimate(G, counts, se)


@dataclass
class RecoveryConfig:
    learning_rate: float = 1e-2
    penalty: float = 10.0
    tol: float | None = None
    max_iter: int = 50_000
    init: np.ndarray | None = None
    enforce_symmetry: bool = True
    stall_window: int = 2_000
    stall_rtol: float = 1e-9

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.penalty > 0):
            raise ValueError("learning_rate and penalty must be positive")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")

    def threshold(self, K: int) -> float:
        return self.tol if self.tol is not None else 1e-4 * K

    def to_json(self) -> dict:
        out = asdict(self)
        out["init"] = None if self.init is None else np.asarray(self.init).tolist()
        return out


@dataclass
class RecoveryReport:
    converged: bool
    status: str
    iterations: int
    residual: float
    projected_residual: float
    objective: float
    threshold: float
    diag_dominant: bool
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def smooth_objective(S: np.ndarray, G: np.ndarray) -> float:
    E = S @ S.T - G
    return float(np.sum(E * E))


def smooth_gradient(S: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Gradient of ‖S Sᵀ - G‖²_F, i.e. 2 (E + Eᵀ) S with E = S Sᵀ - G."""
    E = S @ S.T - G
    return 2.0 * (E + E.T) @ S


def stochastic_penalty(S: np.ndarray) -> float:
    return float(np.abs(S.sum(axis=1) - 1.0).sum() - np.minimum(S, 0.0).sum())


def penalty_subgradient(S: np.ndarray, zero_tol: float = 1e-12) -> np.ndarray:
    """Subgradient of the stochasticity penalty (sign convention, 0 at zero).

    Row-sum errors within ``zero_tol`` count as exactly zero.
    """
    err = S.sum(axis=1) - 1.0
    row_sign = np.where(np.abs(err) <= zero_tol, 0.0, np.sign(err))
    return row_sign[:, None] * np.ones_like(S) - (S < 0).astype(float)


def penalty_prox(Y: np.ndarray, t: float) -> np.ndarray:
    """Proximal map of ``t * stochastic_penalty``, applied term by term.

    Each row is shifted uniformly toward unit sum by at most ``t`` per entry,
    landing exactly on it when close enough; negative entries are raised by
    at most ``t`` but never past zero.
    """
    K = Y.shape[1]
    err = Y.sum(axis=1) - 1.0
    shift = np.sign(err) * np.minimum(t, np.abs(err) / K)
    Y = Y - shift[:, None]
    return np.where(Y < 0, np.minimum(Y + t, 0.0), Y)


def penalized_objective(S: np.ndarray, G: np.ndarray, penalty: float) -> float:
    return smooth_objective(S, G) + penalty * stochastic_penalty(S)


def _residual(S, G) -> float:
    return float(np.linalg.norm(S @ S.T - G))


def recover_collision_matrix(G, config: RecoveryConfig | None = None) -> tuple[np.ndarray, RecoveryReport]:
    """Recover a row-stochastic root of ``G`` by penalised gradient descent.

    Each iteration takes a gradient step of size ``t`` on the smooth term and
    then the proximal map of the penalty, which is the subgradient step
    ``S - t (a + λ b)`` with ``b`` capped so a row sum or a negative entry
    is never pushed past its target. ``t`` starts at ``config.learning_rate``,
    is halved whenever a step would increase the objective, and is allowed
    to grow back afterwards. Descent
    stops once the unsquared residual ‖S Sᵀ - G‖_F drops to the threshold.
    The returned matrix is clipped at zero and row-normalised.

    Raises NonConvergenceError, carrying the best projected iterate, if the
    threshold is not reached within ``max_iter`` steps or progress stalls.
    """
    config = config or RecoveryConfig()
    if isinstance(G, GramianEstimate):
        G = G.G
    G = as_matrix(G, square=True)
    K = G.shape[0]
    if not np.allclose(G, G.T, atol=1e-8):
        raise ValueError("G must be symmetric")
    notes: list[str] = []
    if not config.enforce_symmetry:
        msg = "symmetry not enforced: uniqueness of the recovered root is not guaranteed"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)

    S = np.eye(K) if config.init is None else as_matrix(config.init, square=True).copy()
    if S.shape != G.shape:
        raise DimensionError(f"init of shape {S.shape} for a {K}x{K} Gramian")
    if config.enforce_symmetry:
        S = 0.5 * (S + S.T)
    lam = config.penalty
    gamma = config.threshold(K)
    f = penalized_objective(S, G, lam)
    step = config.learning_rate
    best, best_f = S.copy(), f
    history_f = f
    status = "max_iter"
    it = 0
    for it in range(1, config.max_iter + 1):
        if _residual(S, G) <= gamma:
            status = "converged"
            it -= 1
            break
        grad = smooth_gradient(S, G)
        while True:
            cand = penalty_prox(S - step * grad, step * lam)
            if config.enforce_symmetry:
                cand = 0.5 * (cand + cand.T)
            f_cand = penalized_objective(cand, G, lam)
            if f_cand <= f or step < 1e-16:
                break
            step *= 0.5
        if f_cand > f:
            status = "stalled"
            break
        S, f = cand, f_cand
        step = min(config.learning_rate, 2.0 * step)
        if f < best_f:
            best, best_f = S.copy(), f
        if it % config.stall_window == 0:
            if history_f - f <= config.stall_rtol * max(history_f, 1e-300):
                status = "stalled"
                break
            history_f = f
    else:
        if _residual(S, G) <= gamma:
            status = "converged"

    if status != "converged":
        S = best
    residual = _residual(S, G)
    S_out = project_rows_to_simplex(S)
    dominant = is_strictly_diag_dominant(S_out)
    if not dominant:
        msg = "recovered matrix is not strictly diagonally dominant; root may not be unique"
        notes.append(msg)
        log.warning(msg)
    report = RecoveryReport(
        converged=status == "converged",
        status=status,
        iterations=it,
        residual=residual,
        projected_residual=_residual(S_out, G),
        objective=penalized_objective(S, G, lam),
        threshold=gamma,
        diag_dominant=dominant,
        warnings=notes,
    )
    if not report.converged:
        raise NonConvergenceError(
            f"recovery {status} after {it} iterations with residual {residual:.3g} > {gamma:.3g}",
            S_out,
            report,
        )
    return S_out, report


def estimate_collision_matrix(
    similarity: SimilarityFn,
    data: Dataset,
    m_per_cell: int = 10_000,
    seed: int = 0,
    config: RecoveryConfig | None = None,
    allow_unconverged: bool = True,
) -> tuple[np.ndarray, RecoveryReport, GramianEstimate]:
    """Gramian estimate followed by recovery.

    With ``allow_unconverged`` a noisy Gramian that admits no exact
    stochastic root yields the best iterate and a report marked unconverged
    instead of an exception.
    """
    gram = estimate_gramian(similarity, data, m_per_cell, seed)
    try:
        S, report = recover_collision_matrix(gram.G, config)
    except NonConvergenceError as exc:
        if not allow_unconverged:
            raise
        S, report = exc.best, exc.report
    return S, report, gram


def precision_recall_from_s(S, priors) -> tuple[np.ndarray, np.ndarray]:
    """Per-class precision and recall of the posterior-sampling classifier.

    Precision is NaN where no mass is predicted into a class.
    """
    S = as_matrix(S, square=True)
    priors = np.asarray(priors, dtype=float)
    if priors.shape != (S.shape[0],):
        raise DimensionError(f"{priors.size} priors for a {S.shape[0]}x{S.shape[0]} matrix")
    recall = np.diag(S).copy()
    predicted_mass = priors @ S
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted_mass > 0, priors * recall / predicted_mass, np.nan)
    return precision, recall


def collision_divergence_from_s(S) -> float:
    """1 - 2 S₁₂ for a two-class, equal-prior collision matrix, clamped to [0, 1]."""
    S = as_matrix(S, square=True)
    if S.shape != (2, 2):
        raise DimensionError("collision divergence needs a 2x2 collision matrix")
    return float(min(1.0, max(0.0, 1.0 - 2.0 * S[0, 1])))


def gramian_stderr_from_s(S: np.ndarray, se: np.ndarray) -> np.ndarray:
    """First-order standard error of (S Sᵀ)_ij from independent entry errors."""
    K = S.shape[0]
    out = np.zeros((K, K))
    for i in range(K):
        for j in range(K):
            if i == j:
                out[i, j] = math.sqrt(np.sum((2 * S[i] * se[i]) ** 2))
            else:
                out[i, j] = math.sqrt(np.sum((S[j] * se[i]) ** 2 + (S[i] * se[j]) ** 2))
    return out
