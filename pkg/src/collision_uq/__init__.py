"""Collision-matrix estimation and posterior recovery for classification data."""

from .baselines import (
    CalibratedClassifier,
    ece,
    fit_temperature,
    mc_dropout_posterior,
    plug_in_collision_matrix,
    train_classifier,
)
from .contrastive import (
    ContrastiveModel,
    balanced_pair_batches,
    empirical_pair_risk,
    oracle_similarity,
    train_contrastive,
)
from .estimator import (
    GramianEstimate,
    RecoveryConfig,
    RecoveryReport,
    collision_divergence_from_s,
    estimate_collision_matrix,
    estimate_gramian,
    precision_recall_from_s,
    recover_collision_matrix,
)
from .harness import ScenarioConfig, divergence_curve, load_csv_dataset, preset, run_scenario
from .matrix_core import (
    is_row_stochastic,
    is_strictly_diag_dominant,
    project_to_simplex,
    row_tvd,
    solve_linear,
)
from .mixture import (
    Dataset,
    GaussianMixture,
    bayes_error_rate,
    collision_divergence,
    pber_from_s,
    reference_divergences,
    sample,
    true_collision_matrix,
    true_posterior,
)
from .nn import FeedForwardNet, TrainConfig
from .posterior import (
    ComparisonSets,
    PosteriorEstimate,
    estimate_posterior,
    expected_similarity_scores,
    posterior_from_similarity,
)

__version__ = "0.1.0"

__all__ = [
    "CalibratedClassifier",
    "ComparisonSets",
    "ContrastiveModel",
    "Dataset",
    "FeedForwardNet",
    "GaussianMixture",
    "GramianEstimate",
    "PosteriorEstimate",
    "RecoveryConfig",
    "RecoveryReport",
    "ScenarioConfig",
    "TrainConfig",
    "balanced_pair_batches",
    "bayes_error_rate",
    "collision_divergence",
    "collision_divergence_from_s",
    "divergence_curve",
    "ece",
    "empirical_pair_risk",
    "estimate_collision_matrix",
    "estimate_gramian",
    "estimate_posterior",
    "expected_similarity_scores",
    "fit_temperature",
    "is_row_stochastic",
    "is_strictly_diag_dominant",
    "load_csv_dataset",
    "mc_dropout_posterior",
    "oracle_similarity",
    "pber_from_s",
    "plug_in_collision_matrix",
    "posterior_from_similarity",
    "precision_recall_from_s",
    "preset",
    "project_to_simplex",
    "recover_collision_matrix",
    "reference_divergences",
    "row_tvd",
    "run_scenario",
    "sample",
    "solve_linear",
    "train_classifier",
    "train_contrastive",
    "true_collision_matrix",
    "true_posterior",
]
