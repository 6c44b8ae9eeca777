import numpy as np
import pytest
from conftest import random_dominant_doubly_stochastic
from hypothesis import given, settings
from hypothesis import strategies as st

from collision_uq.contrastive import oracle_similarity
from collision_uq.errors import DimensionError, NonConvergenceError
from collision_uq.estimator import (
    GramianEstimate,
    RecoveryConfig,
    collision_divergence_from_s,
    estimate_collision_matrix,
    estimate_gramian,
    gramian_stderr_from_s,
    penalized_objective,
    penalty_prox,
    precision_recall_from_s,
    recover_collision_matrix,
    smooth_gradient,
    smooth_objective,
    stochastic_penalty,
)
from collision_uq.matrix_core import is_row_stochastic, row_tvd
from collision_uq.mixture import GaussianMixture, collision_divergence, sample, true_collision_matrix


def oracle(gm):
    return lambda X, Xt: oracle_similarity(gm, X, Xt)


def perturbed_identity(K, rng, scale=0.01):
    S = np.eye(K) + rng.uniform(-scale, scale, (K, K))
    S = np.clip(S, 0, None)
    return S / S.sum(axis=1, keepdims=True)


class TestEstimateGramian:
    def test_separated_classes_give_identity(self):
        gm = GaussianMixture([[0.0, 0.0], [30.0, 0.0], [0.0, 30.0]])
        est = estimate_gramian(oracle(gm), sample(gm, 40, seed=0), m_per_cell=500)
        np.testing.assert_allclose(est.G, np.eye(3), atol=1e-6)

    def test_identical_classes_give_uniform(self):
        gm = GaussianMixture(np.zeros((4, 2)))
        est = estimate_gramian(oracle(gm), sample(gm, 30, seed=0), m_per_cell=500)
        np.testing.assert_allclose(est.G, 0.25, atol=1e-12)

    def test_full_enumeration_for_small_cells(self):
        gm = GaussianMixture([[0.0], [1.0]])
        data = sample(gm, 10, seed=0)
        est = estimate_gramian(oracle(gm), data, m_per_cell=100)
        assert np.all(est.pair_counts == 100)
        A, B = data.members(0), data.members(1)
        manual = np.mean([oracle_similarity(gm, a, b) for a in A for b in B])
        assert est.G[0, 1] == pytest.approx(manual)

    def test_symmetric_and_deterministic(self):
        gm = GaussianMixture([[0.0], [1.0], [3.0]])
        data = sample(gm, 200, seed=0)
        a = estimate_gramian(oracle(gm), data, m_per_cell=1000, seed=5)
        b = estimate_gramian(oracle(gm), data, m_per_cell=1000, seed=5)
        np.testing.assert_array_equal(a.G, b.G)
        np.testing.assert_array_equal(a.G, a.G.T)
        assert np.all(a.pair_counts == 1000)

    def test_matches_true_gramian(self, scenario_a3, scenario_a3_truth):
        # large pools make the drawn pairs close to independent draws
        S, se = scenario_a3_truth
        data = sample(scenario_a3, 20_000, seed=1)
        est = estimate_gramian(oracle(scenario_a3), data, m_per_cell=10_000, seed=2)
        tol = 3 * np.sqrt(est.stderr**2 + gramian_stderr_from_s(S, se) ** 2)
        assert np.all(np.abs(est.G - S @ S.T) <= tol)

    def test_empty_class(self):
        from collision_uq.mixture import Dataset

        data = Dataset(np.zeros((3, 1)), [0, 0, 0], 2)
        with pytest.raises(ValueError):
            estimate_gramian(lambda a, b: np.ones(len(a)), data)


class TestObjective:
    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        S = rng.random((4, 4))
        B = rng.random((4, 4))
        G = B @ B.T
        analytic = smooth_gradient(S, G)
        numeric = np.zeros_like(S)
        eps = 1e-6
        for idx in np.ndindex(S.shape):
            up, down = S.copy(), S.copy()
            up[idx] += eps
            down[idx] -= eps
            numeric[idx] = (smooth_objective(up, G) - smooth_objective(down, G)) / (2 * eps)
        assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-5

    def test_penalty_zero_on_stochastic(self):
        assert stochastic_penalty(np.full((3, 3), 1 / 3)) == pytest.approx(0.0, abs=1e-15)

    def test_penalty_values(self):
        S = np.array([[1.2, -0.1], [0.5, 0.4]])
        # row errors 0.1 and 0.1, negative mass 0.1
        assert stochastic_penalty(S) == pytest.approx(0.3)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6), st.floats(1e-4, 0.5))
    def test_prox_never_increases_penalty(self, seed, t):
        Y = np.random.default_rng(seed).normal(0.3, 0.5, (4, 4))
        assert stochastic_penalty(penalty_prox(Y, t)) <= stochastic_penalty(Y) + 1e-12

    def test_prox_fixes_stochastic_matrices(self):
        S = np.array([[0.7, 0.3], [0.2, 0.8]])
        np.testing.assert_array_equal(penalty_prox(S, 0.1), S)


class TestRecovery:
    def test_identity(self):
        S, report = recover_collision_matrix(np.eye(4))
        np.testing.assert_allclose(S, np.eye(4))
        assert report.converged and report.diag_dominant and report.iterations == 0

    def test_shrunk_identity(self):
        K = 4
        S0 = 0.8 * np.eye(K) + 0.2 / K
        S, report = recover_collision_matrix(S0 @ S0.T)
        assert report.converged
        assert row_tvd(S, S0)[0] < 1e-3

    @pytest.mark.parametrize("K", [3, 5, 8])
    def test_unique_root_from_several_inits(self, K):
        rng = np.random.default_rng(K)
        for _ in range(3):
            S0 = random_dominant_doubly_stochastic(K, rng)
            G = S0 @ S0.T
            roots = []
            for _ in range(5):
                S, report = recover_collision_matrix(G, RecoveryConfig(init=perturbed_identity(K, rng)))
                assert report.converged
                roots.append(S)
            for S in roots:
                assert row_tvd(S, S0)[0] < 1e-3
                assert row_tvd(S, roots[0])[0] < 1e-3

    def test_output_row_stochastic(self, rng):
        S0 = random_dominant_doubly_stochastic(5, rng)
        S, report = recover_collision_matrix(S0 @ S0.T)
        assert is_row_stochastic(S, tol=1e-6) and np.all(S >= 0)
        assert report.residual <= report.threshold

    def test_objective_decreases_monotonically(self, rng):
        import collision_uq.estimator as est

        S0 = random_dominant_doubly_stochastic(4, rng)
        G = S0 @ S0.T
        values = []
        original = est.penalized_objective

        def recording(S, G_, lam):
            value = original(S, G_, lam)
            values.append(value)
            return value

        est.penalized_objective = recording
        try:
            recover_collision_matrix(G, RecoveryConfig(learning_rate=1e-2))
        finally:
            est.penalized_objective = original
        # the loop evaluates the start, then one accepted value per step (plus rejected trials)
        accepted = [values[0]]
        for v in values[1:-1]:
            if v <= accepted[-1] + 1e-12:
                accepted.append(v)
        assert accepted[-1] < 1e-3 * accepted[0]
        assert np.all(np.diff(accepted) <= 1e-12)

    def test_non_convergence_is_signalled(self, rng):
        # not a Gramian of any stochastic matrix
        G = np.array([[2.0, 0.0], [0.0, 2.0]])
        with pytest.raises(NonConvergenceError) as info:
            recover_collision_matrix(G, RecoveryConfig(max_iter=200))
        assert not info.value.report.converged
        assert info.value.report.residual > info.value.report.threshold
        assert is_row_stochastic(info.value.best, tol=1e-9)

    def test_max_iter_status(self, rng):
        S0 = random_dominant_doubly_stochastic(4, rng)
        with pytest.raises(NonConvergenceError) as info:
            recover_collision_matrix(S0 @ S0.T, RecoveryConfig(max_iter=1, tol=1e-12))
        assert info.value.report.status == "max_iter"

    def test_non_dominant_root_flagged(self):
        # from the identity the dominant root [[.6,.4],[.4,.6]] is found;
        # starting at the other root keeps it and must be flagged
        S0 = np.array([[0.4, 0.6], [0.6, 0.4]])
        S, report = recover_collision_matrix(S0 @ S0.T)
        assert report.diag_dominant and S[0, 0] == pytest.approx(0.6, abs=1e-3)
        S, report = recover_collision_matrix(S0 @ S0.T, RecoveryConfig(init=S0))
        assert not report.diag_dominant
        assert any("dominant" in w for w in report.warnings)

    def test_symmetry_off_warns(self, rng):
        S0 = random_dominant_doubly_stochastic(3, rng)
        with pytest.warns(RuntimeWarning):
            recover_collision_matrix(S0 @ S0.T, RecoveryConfig(enforce_symmetry=False))

    def test_rejects_asymmetric_gramian(self):
        with pytest.raises(ValueError):
            recover_collision_matrix(np.array([[1.0, 0.2], [0.0, 1.0]]))

    def test_init_shape_checked(self):
        with pytest.raises(DimensionError):
            recover_collision_matrix(np.eye(3), RecoveryConfig(init=np.eye(2)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RecoveryConfig(penalty=0.0)
        assert RecoveryConfig().threshold(5) == pytest.approx(5e-4)

    def test_accepts_gramian_estimate(self):
        est = GramianEstimate(np.eye(2), np.ones((2, 2), dtype=int), np.zeros((2, 2)))
        S, _ = recover_collision_matrix(est)
        np.testing.assert_allclose(S, np.eye(2))


class TestEndToEnd:
    def test_oracle_similarity_recovers_true_s(self, scenario_a3, scenario_a3_truth):
        S_true, _ = scenario_a3_truth
        data = sample(scenario_a3, 2000, seed=3)
        S, report, gram = estimate_collision_matrix(oracle(scenario_a3), data, m_per_cell=10_000, seed=0)
        assert row_tvd(S, S_true)[0] < 0.05
        assert is_row_stochastic(S, tol=1e-6)

    def test_unconverged_raises_when_requested(self):
        gm = GaussianMixture([[0.0], [0.3]])
        data = sample(gm, 50, seed=0)
        noisy = lambda X, Xt: np.clip(oracle_similarity(gm, X, Xt) + 0.3, 0, 1)  # noqa: E731
        with pytest.raises(NonConvergenceError):
            estimate_collision_matrix(noisy, data, 500, config=RecoveryConfig(max_iter=500), allow_unconverged=False)
        S, report, _ = estimate_collision_matrix(noisy, data, 500, config=RecoveryConfig(max_iter=500))
        assert not report.converged and is_row_stochastic(S)


class TestDerivedStatistics:
    def test_precision_recall_identity(self):
        precision, recall = precision_recall_from_s(np.eye(3), [1 / 3] * 3)
        np.testing.assert_allclose(precision, 1.0)
        np.testing.assert_allclose(recall, 1.0)

    def test_precision_recall_uniform(self):
        precision, recall = precision_recall_from_s(np.full((4, 4), 0.25), [0.25] * 4)
        np.testing.assert_allclose(precision, 0.25)
        np.testing.assert_allclose(recall, 0.25)

    def test_precision_recall_worked_values(self):
        precision, recall = precision_recall_from_s([[0.9, 0.1], [0.3, 0.7]], [0.8, 0.2])
        np.testing.assert_allclose(recall, [0.9, 0.7])
        np.testing.assert_allclose(precision, [0.72 / 0.78, 0.14 / 0.22])
        assert precision[0] == pytest.approx(0.923, abs=5e-4)
        assert precision[1] == pytest.approx(0.636, abs=5e-4)

    def test_precision_absent_when_never_predicted(self):
        precision, _ = precision_recall_from_s([[1.0, 0.0], [1.0, 0.0]], [0.5, 0.5])
        assert np.isnan(precision[1])

    def test_precision_recall_dimension(self):
        with pytest.raises(DimensionError):
            precision_recall_from_s(np.eye(2), [1.0])

    def test_collision_divergence_extremes(self):
        assert collision_divergence_from_s(np.eye(2)) == 1.0
        assert collision_divergence_from_s(np.full((2, 2), 0.5)) == 0.0

    def test_collision_divergence_needs_binary(self):
        with pytest.raises(DimensionError):
            collision_divergence_from_s(np.eye(3))

    def test_collision_divergence_consistent_with_quadrature(self):
        gm = GaussianMixture([[1.0], [-1.0]])
        S, se = true_collision_matrix(gm, 200_000, seed=6)
        assert abs(collision_divergence_from_s(S) - collision_divergence(gm)) <= 2 * 3 * se[0, 1]

    def test_penalized_objective_zero_at_root(self, rng):
        S0 = random_dominant_doubly_stochastic(3, rng)
        assert penalized_objective(S0, S0 @ S0.T, 10.0) == pytest.approx(0.0, abs=1e-12)
