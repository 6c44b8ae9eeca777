import logging

import numpy as np
import pytest
from conftest import random_dominant_doubly_stochastic
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from collision_uq.contrastive import oracle_similarity, train_contrastive
from collision_uq.errors import SingularMatrixError
from collision_uq.estimator import estimate_collision_matrix
from collision_uq.matrix_core import is_simplex
from collision_uq.mixture import GaussianMixture, sample, true_posterior
from collision_uq.nn import TrainConfig
from collision_uq.posterior import (
    ComparisonSets,
    estimate_posterior,
    expected_similarity_scores,
    posterior_from_similarity,
    posterior_matrix,
)


def oracle(gm):
    return lambda X, Xt: oracle_similarity(gm, X, Xt)


def random_simplex(K, rng):
    return rng.dirichlet(np.ones(K))


def mean_tvd(Y, Z):
    return float(np.mean(0.5 * np.abs(Y - Z).sum(axis=1)))


class TestComparisonSets:
    def test_capped_at_class_size(self):
        data = sample(GaussianMixture([[0.0], [1.0]]), 7, seed=0)
        sets = ComparisonSets.from_dataset(data, m=200, seed=0)
        assert [len(p) for p in sets.points] == [7, 7]

    def test_without_replacement_and_from_class(self):
        data = sample(GaussianMixture([[0.0], [100.0]]), 50, seed=0)
        sets = ComparisonSets.from_dataset(data, m=20, seed=1)
        for k, P in enumerate(sets.points):
            assert len(np.unique(P[:, 0])) == 20
            assert np.all(np.isin(P[:, 0], data.members(k)[:, 0]))

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            ComparisonSets([np.zeros((1, 2)), np.zeros((0, 2))])


class TestExpectedSimilarityScores:
    def test_one_hot_world(self):
        gm = GaussianMixture([[0.0], [50.0], [100.0]])
        sets = ComparisonSets.from_dataset(sample(gm, 10, seed=0), 10)
        q = expected_similarity_scores(oracle(gm), np.array([0.3]), sets)
        np.testing.assert_allclose(q, [1.0, 0.0, 0.0], atol=1e-12)

    def test_batch_matches_single(self, scenario_a3, rng):
        sets = ComparisonSets.from_dataset(sample(scenario_a3, 20, seed=0), 20)
        X = rng.standard_normal((4, 4))
        batch = expected_similarity_scores(oracle(scenario_a3), X, sets)
        for x, row in zip(X, batch):
            np.testing.assert_allclose(expected_similarity_scores(oracle(scenario_a3), x, sets), row)

    def test_exact_expectation_is_linear_in_posterior(self):
        gm = GaussianMixture([[0.7], [-0.7]])
        f = [stats.norm(0.7, 1).pdf, stats.norm(-0.7, 1).pdf]
        post = lambda t: true_posterior(gm, [t])  # noqa: E731
        S = np.array(
            [[integrate.quad(lambda t: f[i](t) * post(t)[j], -15, 15, epsabs=1e-13)[0] for j in range(2)] for i in range(2)]
        )
        for x in (-1.3, 0.2, 2.0):
            y = post(x)
            q = np.array(
                [
                    integrate.quad(lambda t: f[i](t) * oracle_similarity(gm, np.array([x]), np.array([t])), -15, 15, epsabs=1e-13)[0]
                    for i in range(2)
                ]
            )
            np.testing.assert_allclose(q, S @ y, atol=1e-9)

    def test_monte_carlo_rate(self, scenario_a3):
        gm = scenario_a3
        rng = np.random.default_rng(0)
        X = rng.standard_normal((20, 4)) + 0.5
        reference = expected_similarity_scores(oracle(gm), X, ComparisonSets.from_dataset(sample(gm, 20_000, seed=1), 20_000))
        errors = {}
        for m in (50, 500):
            per_seed = []
            for s in range(20):
                sets = ComparisonSets.from_dataset(sample(gm, m, seed=100 + s), m)
                per_seed.append(np.abs(expected_similarity_scores(oracle(gm), X, sets) - reference).mean())
            errors[m] = np.mean(per_seed)
        ratio = errors[50] / errors[500]
        assert 0.6 * np.sqrt(10) < ratio < 1.5 * np.sqrt(10)


class TestPosteriorFromSimilarity:
    def test_identity(self):
        q = np.array([0.2, 0.5, 0.3])
        est = posterior_from_similarity(np.eye(3), q)
        np.testing.assert_allclose(est.y_hat, q)
        assert est.projection_distance == 0.0

    def test_constructed_pair(self):
        S = np.array([[0.8, 0.1, 0.1], [0.1, 0.7, 0.2], [0.1, 0.2, 0.7]])
        y = np.array([0.7, 0.2, 0.1])
        est = posterior_from_similarity(S, S @ y)
        np.testing.assert_allclose(est.y_hat, y, atol=1e-12)
        assert est.projection_distance == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 10**6))
    def test_linear_identity_recovers_posterior(self, K, seed):
        rng = np.random.default_rng(seed)
        S = random_dominant_doubly_stochastic(K, rng)
        y = random_simplex(K, rng)
        est = posterior_from_similarity(S, S @ y)
        assert np.max(np.abs(est.y_hat - y)) < 1e-8

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 10**6))
    def test_output_always_on_simplex(self, K, seed):
        rng = np.random.default_rng(seed)
        S = random_dominant_doubly_stochastic(K, rng)
        # solutions that sum to one, some with negative entries
        v = random_simplex(K, rng) + rng.normal(0, 0.2, K)
        v += (1 - v.sum()) / K
        est = posterior_from_similarity(S, S @ v)
        assert is_simplex(est.y_hat)
        if np.all(est.raw_solution >= 0):
            assert est.projection_distance == pytest.approx(0.0, abs=1e-12)

    def test_projection_distance_recorded(self):
        est = posterior_from_similarity(np.eye(2), np.array([1.2, -0.2]))
        np.testing.assert_allclose(est.y_hat, [1.0, 0.0])
        assert est.projection_distance == pytest.approx(0.4)

    def test_uniform_matrix_is_refused(self):
        with pytest.raises(SingularMatrixError):
            posterior_from_similarity(np.full((3, 3), 1 / 3), np.full(3, 1 / 3))

    def test_non_dominant_warns_but_solves(self, caplog):
        caplog.set_level(logging.WARNING, logger="collision_uq")
        S = np.array([[0.45, 0.55], [0.1, 0.9]])
        est = posterior_from_similarity(S, S @ np.array([0.5, 0.5]))
        np.testing.assert_allclose(est.y_hat, [0.5, 0.5])
        assert est.warnings and "dominant" in caplog.text


class TestEstimatePosterior:
    def test_true_components_error_falls_with_m(self, scenario_a3, scenario_a3_truth):
        S, _ = scenario_a3_truth
        gm = scenario_a3
        test = sample(gm, 70, seed=77).features
        truth = true_posterior(gm, test)
        errors = []
        for m in (10, 100, 1000):
            per_seed = []
            for s in range(3):
                sets = ComparisonSets.from_dataset(sample(gm, m, seed=500 + s), m, seed=s)
                per_seed.append(mean_tvd(posterior_matrix(estimate_posterior(oracle(gm), S, test, sets)), truth))
            errors.append(np.mean(per_seed))
        assert errors[0] > errors[1] > errors[2]

    def test_separated_classes_with_trained_model(self):
        gm = GaussianMixture([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
        train, val, test = sample(gm, 300, seed=0).split((0.8, 0.1, 0.1), seed=0)
        model = train_contrastive(train, TrainConfig(epochs=20, batch_size=32, momentum=0.9), hidden=[32, 32])
        S_hat, _, _ = estimate_collision_matrix(model.similarity_batch, train, m_per_cell=2000)
        sets = ComparisonSets.from_dataset(val, 30)
        Y = posterior_matrix(estimate_posterior(model.similarity_batch, S_hat, test.features, sets))
        hits = (Y.argmax(axis=1) == test.labels) & (Y.max(axis=1) > 0.9)
        assert hits.mean() > 0.99

    def test_identical_distributions_degenerate(self):
        gm = GaussianMixture(np.zeros((3, 2)))
        data = sample(gm, 50, seed=0)
        S_hat, report, _ = estimate_collision_matrix(oracle(gm), data, 1000)
        assert not report.diag_dominant
        sets = ComparisonSets.from_dataset(data, 20)
        est = estimate_posterior(oracle(gm), S_hat, np.ones(2), sets)
        np.testing.assert_allclose(est.y_hat, 1 / 3, atol=1e-6)
        assert est.warnings

    def test_deterministic(self, scenario_a3, scenario_a3_truth):
        S, _ = scenario_a3_truth
        val = sample(scenario_a3, 100, seed=3)
        x = np.full(4, 0.4)
        a = estimate_posterior(oracle(scenario_a3), S, x, ComparisonSets.from_dataset(val, 40, seed=9))
        b = estimate_posterior(oracle(scenario_a3), S, x, ComparisonSets.from_dataset(val, 40, seed=9))
        assert a.to_json() == b.to_json()

    def test_batch_returns_list(self, scenario_a3, scenario_a3_truth):
        S, _ = scenario_a3_truth
        sets = ComparisonSets.from_dataset(sample(scenario_a3, 30, seed=3), 30)
        out = estimate_posterior(oracle(scenario_a3), S, np.zeros((5, 4)), sets)
        assert len(out) == 5 and posterior_matrix(out).shape == (5, 3)
