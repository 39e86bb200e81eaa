import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.cluster.vq import kmeans2
from scipy.stats import norm

from usermodels.errors import ValidationError
from usermodels.frames import FrameSequence
from usermodels.gmm_ubm import (
    DiagGmm, EmConfig, MapConfig, bhattacharyya_gaussian, fit_em, gmm_distance,
    load_gmm, log_likelihood, map_adapt, responsibilities, save_gmm, train_ubm,
)


def two_component_1d(mu=(-1.0, 1.0), var=(1.0, 1.0), w=(0.5, 0.5)):
    return DiagGmm(np.array(w), np.array(mu)[:, None], np.array(var)[:, None])


class TestDiagGmm:
    def test_rejects_bad_weights(self):
        with pytest.raises(ValidationError):
            DiagGmm([0.6, 0.6], [[0.0], [1.0]], [[1.0], [1.0]])

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValidationError):
            DiagGmm([1.0], [[0.0]], [[0.0]])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValidationError):
            DiagGmm([0.5, 0.5], [[0.0, 1.0]], [[1.0, 1.0]])


class TestLogLikelihood:
    def test_standard_normal_at_mode(self):
        m = DiagGmm([1.0], [[0.0]], [[1.0]])
        assert log_likelihood(m, [[0.0]]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_standard_normal_one_sigma(self):
        m = DiagGmm([1.0], [[0.0]], [[1.0]])
        assert log_likelihood(m, [[1.0]]) == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5, abs=1e-12)
        assert log_likelihood(m, [[1.0]]) == pytest.approx(-1.4189, abs=1e-4)

    def test_equidistant_frame_matches_direct_density(self):
        m = two_component_1d(mu=(-2.0, 2.0), var=(1.0, 3.0))
        expected = math.log(0.5 * norm.pdf(0, -2, 1) + 0.5 * norm.pdf(0, 2, math.sqrt(3)))
        assert log_likelihood(m, [[0.0]]) == pytest.approx(expected, abs=1e-12)

    def test_multidim_against_scipy(self):
        rng = np.random.default_rng(3)
        m = DiagGmm([0.2, 0.8], rng.normal(size=(2, 3)), rng.uniform(0.5, 2, size=(2, 3)))
        x = rng.normal(size=(50, 3))
        dens = sum(m.weights[k] * np.prod(norm.pdf(x, m.means[k], np.sqrt(m.variances[k])), axis=1)
                   for k in range(2))
        assert log_likelihood(m, x) == pytest.approx(np.mean(np.log(dens)), abs=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            log_likelihood(DiagGmm([1.0], [[0.0]], [[1.0]]), np.zeros((3, 2)))

    def test_empty_frames(self):
        with pytest.raises(ValidationError):
            log_likelihood(DiagGmm([1.0], [[0.0]], [[1.0]]), np.zeros((0, 1)))


class TestResponsibilities:
    def test_single_component_all_ones(self):
        m = DiagGmm([1.0], [[0.0, 0.0]], [[1.0, 2.0]])
        g = responsibilities(m, np.random.default_rng(0).normal(size=(20, 2)))
        assert np.all(g == 1.0)

    def test_separation_limit(self):
        m = two_component_1d(mu=(0.0, 20.0))
        assert responsibilities(m, [[0.0]])[0, 0] > 0.999

    def test_symmetric_midpoint(self):
        m = two_component_1d(mu=(-3.0, 3.0))
        np.testing.assert_allclose(responsibilities(m, [[0.0]]), [[0.5, 0.5]], atol=1e-9)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        m = DiagGmm([0.1, 0.3, 0.6], rng.normal(size=(3, 4)), rng.uniform(0.1, 3, size=(3, 4)))
        g = responsibilities(m, rng.normal(scale=5, size=(200, 4)))
        np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((g >= 0) & (g <= 1))


class TestTrainUbm:
    def test_single_component_is_sample_moments(self):
        rng = np.random.default_rng(0)
        x = rng.normal([3.0, -1.0], [1.0, 2.0], size=(1000, 2))
        m = train_ubm(x, EmConfig(n_components=1))
        np.testing.assert_allclose(m.means[0], [3.0, -1.0], atol=0.2)
        np.testing.assert_allclose(m.variances[0], [1.0, 4.0], rtol=0.25)
        np.testing.assert_allclose(m.means[0], x.mean(axis=0), atol=1e-12)

    def test_two_clusters_match_kmeans_oracle(self):
        rng = np.random.default_rng(1)
        x = np.concatenate([rng.normal(0, 1, 500), rng.normal(10, 1, 500)])[:, None]
        centroids, labels = kmeans2(x, np.array([[1.0], [9.0]]), minit="matrix", seed=0)
        m = train_ubm(x, EmConfig(n_components=2, seed=0))
        order = np.argsort(m.means[:, 0])
        np.testing.assert_allclose(m.weights[order], [0.5, 0.5], atol=0.05)
        np.testing.assert_allclose(m.means[order, 0], [0.0, 10.0], atol=0.3)
        np.testing.assert_allclose(m.means[order, 0], np.sort(centroids[:, 0]), atol=0.05)
        np.testing.assert_allclose(m.weights[order], np.bincount(labels) / 1000, atol=0.01)

    @pytest.mark.parametrize("seed", range(5))
    def test_log_likelihood_monotone(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_t(3, size=(400, 3)) + rng.integers(0, 4, size=(400, 1))
        res = fit_em(x, EmConfig(n_components=4, seed=seed, max_iterations=50, tol=1e-12))
        assert np.all(np.diff(res.log_likelihoods) >= -1e-8)

    def test_trace_ends_at_returned_model(self):
        x = np.random.default_rng(2).normal(size=(300, 2))
        res = fit_em(x, EmConfig(n_components=3))
        assert res.log_likelihoods[-1] == pytest.approx(log_likelihood(res.model, x), abs=1e-12)

    def test_deterministic_for_seed(self):
        x = np.random.default_rng(5).normal(size=(500, 3))
        a = train_ubm(x, EmConfig(n_components=4, seed=11))
        b = train_ubm(x, EmConfig(n_components=4, seed=11))
        assert np.array_equal(a.means, b.means) and np.array_equal(a.variances, b.variances)

    def test_variance_floor_respected(self):
        rng = np.random.default_rng(0)
        x = np.vstack([np.zeros((50, 1)), rng.normal(size=(150, 1))])
        m = train_ubm(x, EmConfig(n_components=4, var_floor_factor=0.05))
        assert np.all(m.variances >= 0.05 * np.var(x) * (1 - 1e-12))

    def test_too_few_frames(self):
        with pytest.raises(ValidationError):
            train_ubm(np.random.default_rng(0).normal(size=(30, 2)), EmConfig(n_components=4))

    def test_too_few_distinct_frames(self):
        x = np.repeat([[0.0], [1.0]], 50, axis=0)
        with pytest.raises(ValidationError):
            train_ubm(x, EmConfig(n_components=3))

    def test_nonfinite_input(self):
        x = np.random.default_rng(0).normal(size=(100, 2))
        x[3, 1] = np.nan
        with pytest.raises(ValidationError):
            train_ubm(x, EmConfig(n_components=2))

    def test_accepts_frame_sequence(self):
        x = np.random.default_rng(0).normal(size=(100, 2))
        m = train_ubm(FrameSequence(x, 0.01, "gait", "harmonic"), EmConfig(n_components=2))
        assert m.dim == 2


class TestMapAdapt:
    def ubm(self):
        rng = np.random.default_rng(0)
        x = np.vstack([rng.normal(-2, 1, size=(300, 2)), rng.normal(2, 0.5, size=(300, 2))])
        return train_ubm(x, EmConfig(n_components=2, seed=0))

    def test_huge_relevance_returns_ubm(self):
        ubm = self.ubm()
        x = np.random.default_rng(9).normal(5, 2, size=(200, 2))
        adapted = map_adapt(ubm, x, MapConfig(relevance=1e12, adapt_weights=True))
        assert adapted.allclose(ubm, atol=1e-6)

    def test_zero_relevance_single_component_is_sample_mean(self):
        x = np.random.default_rng(4).normal([1.0, 7.0], 2.0, size=(80, 2))
        ubm = DiagGmm([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
        adapted = map_adapt(ubm, x, MapConfig(relevance=0.0))
        np.testing.assert_allclose(adapted.means[0], x.mean(axis=0), atol=1e-9)
        np.testing.assert_allclose(adapted.variances[0], x.var(axis=0), atol=1e-9)

    def test_blend_matches_direct_computation(self):
        ubm = self.ubm()
        x = np.random.default_rng(8).normal(0.5, 1.5, size=(60, 2))
        r = 16.0
        # oracle: posteriors by direct density evaluation, then blend by hand
        dens = np.stack([ubm.weights[k] * np.prod(norm.pdf(x, ubm.means[k], np.sqrt(ubm.variances[k])), axis=1)
                         for k in range(2)], axis=1)
        gamma = dens / dens.sum(axis=1, keepdims=True)
        nk = gamma.sum(axis=0)
        alpha = nk / (nk + r)
        ex = gamma.T @ x / nk[:, None]
        expected = alpha[:, None] * ex + (1 - alpha[:, None]) * ubm.means
        adapted = map_adapt(ubm, x, MapConfig(relevance=r))
        np.testing.assert_allclose(adapted.means, expected, atol=1e-10)
        np.testing.assert_array_equal(adapted.weights, ubm.weights)

    def test_weights_renormalized(self):
        ubm = self.ubm()
        x = np.random.default_rng(1).normal(2, 0.5, size=(100, 2))
        adapted = map_adapt(ubm, x, MapConfig(relevance=4.0, adapt_weights=True))
        assert adapted.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert adapted.weights[np.argmax(ubm.means[:, 0])] > ubm.weights[np.argmax(ubm.means[:, 0])]

    def test_shrinkage_monotone_in_relevance(self):
        ubm = DiagGmm([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
        x = np.random.default_rng(2).normal([1.0, -3.0], 1.0, size=(40, 2))
        prev_dev, prev_dist = None, None
        for r in [0.0, 1.0, 4.0, 16.0, 64.0, 1e3, 1e6]:
            a = map_adapt(ubm, x, MapConfig(relevance=r))
            dev = np.abs(a.means - ubm.means)
            dist = gmm_distance(ubm, a)
            if prev_dev is not None:
                assert np.all(dev <= prev_dev + 1e-15)
                assert dist <= prev_dist + 1e-15
            prev_dev, prev_dist = dev, dist
        assert prev_dist < 1e-6

    def test_component_order_preserved(self):
        ubm = self.ubm()
        x = np.random.default_rng(3).normal(-2, 1, size=(50, 2))
        a = map_adapt(ubm, x, MapConfig(relevance=16))
        # the component that owns the data moves most, the other stays put
        owner = np.argmin(ubm.means[:, 0])
        assert np.abs(a.means[1 - owner] - ubm.means[1 - owner]).max() < 1e-6

    def test_empty_data(self):
        with pytest.raises(ValidationError):
            map_adapt(self.ubm(), np.zeros((0, 2)))

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            map_adapt(self.ubm(), np.zeros((5, 3)))

    def test_config_requires_a_flag(self):
        with pytest.raises(ValidationError):
            MapConfig(adapt_means=False, adapt_variances=False, adapt_weights=False)


class TestBhattacharyya:
    def test_identical(self):
        assert bhattacharyya_gaussian([1, 2], [3, 4], [1, 2], [3, 4]) == 0.0

    def test_mean_shift(self):
        assert bhattacharyya_gaussian([0], [1], [1], [1]) == pytest.approx(0.125, abs=1e-12)

    def test_variance_change(self):
        assert bhattacharyya_gaussian([0], [1], [0], [4]) == pytest.approx(0.5 * math.log(2.5 / 2), abs=1e-12)
        assert bhattacharyya_gaussian([0], [1], [0], [4]) == pytest.approx(0.11157, abs=1e-5)

    def test_errors(self):
        with pytest.raises(ValidationError):
            bhattacharyya_gaussian([0], [0], [0], [1])
        with pytest.raises(ValidationError):
            bhattacharyya_gaussian([0, 1], [1, 1], [0], [1])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(-50, 50), st.floats(0.01, 50), st.floats(-50, 50), st.floats(0.01, 50)),
                    min_size=1, max_size=5))
    def test_symmetric_nonnegative(self, params):
        m1, v1, m2, v2 = map(np.array, zip(*params))
        d12 = bhattacharyya_gaussian(m1, v1, m2, v2)
        d21 = bhattacharyya_gaussian(m2, v2, m1, v1)
        assert d12 >= 0
        assert d12 == pytest.approx(d21, rel=1e-12, abs=1e-15)
        # differences whose square underflows a double give an exact 0.0
        if not (np.allclose(m1, m2, rtol=1e-6, atol=1e-150) and np.allclose(v1, v2, rtol=1e-6, atol=0)):
            assert d12 > 0


class TestGmmDistance:
    def test_identical_models(self):
        m = two_component_1d()
        assert gmm_distance(m, m) == 0.0

    def test_single_component_reduction(self):
        a = DiagGmm([1.0], [[0.0, 1.0]], [[1.0, 2.0]])
        b = DiagGmm([1.0], [[0.5, 1.0]], [[1.5, 2.0]])
        assert gmm_distance(a, b) == bhattacharyya_gaussian(a.means[0], a.variances[0], b.means[0], b.variances[0])

    def test_weighted_sum(self):
        ubm = DiagGmm([0.3, 0.7], [[0.0], [5.0]], [[1.0], [1.0]])
        adapted = DiagGmm([0.3, 0.7], [[1.0], [5.0]], [[1.0], [1.0]])
        assert gmm_distance(ubm, adapted) == pytest.approx(0.0375, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            gmm_distance(two_component_1d(), DiagGmm([1.0], [[0.0]], [[1.0]]))


def test_serialization_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(400, 3)) * [1e-3, 1.0, 1e4]
    m = train_ubm(x, EmConfig(n_components=3))
    save_gmm(m, tmp_path / "ubm.txt")
    back = load_gmm(tmp_path / "ubm.txt")
    for name in ("weights", "means", "variances", "var_floor"):
        assert np.array_equal(getattr(m, name), getattr(back, name))
