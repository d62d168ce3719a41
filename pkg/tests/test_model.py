"""EM operations against independent scalar oracles, plus structural properties."""

import json
import math

import numpy as np
import pytest

import oracles
from gmda import (
    Dataset,
    FitConfig,
    GaussianComponent,
    GmdaParams,
    NoiseSpec,
    Responsibilities,
    SynthSpec,
    e_step,
    fit,
    fit_single_gaussian,
    generate,
    inject_noise,
    log_class_density,
    log_likelihood,
    m_step,
    params_from_dict,
    params_to_dict,
    predict_label,
    predict_posterior,
)
from gmda.errors import (
    DeadComponentWarning,
    DimensionMismatch,
    MonotonicityViolation,
    NumericalCollapse,
)
from gmda.params import FitReport


def build_params(weights, means, covs, gamma, pi, ridge=0.0):
    """Assemble a parameter container from plain nested arrays."""
    weights = np.asarray(weights, dtype=float)
    k, m = weights.shape
    components = tuple(
        tuple(
            GaussianComponent.from_moments(means[w][c], covs[w][c], ridge=ridge)
            for c in range(m)
        )
        for w in range(k)
    )
    return GmdaParams(
        weights=weights,
        components=components,
        gamma=np.asarray(gamma, dtype=float),
        pi=np.asarray(pi, dtype=float),
    )


def random_instance(seed, n=6, dim=1, classes=2, comps=2):
    """A small random dataset plus valid random parameters, linear-domain friendly."""
    rng = np.random.default_rng(seed)
    features = rng.uniform(-2.0, 2.0, size=(n, dim))
    labels = rng.integers(0, classes, size=n)
    labels[:classes] = np.arange(classes)  # every observed label occurs
    weights = rng.uniform(0.2, 1.0, size=(classes, comps))
    weights /= weights.sum(axis=1, keepdims=True)
    means = rng.uniform(-2.0, 2.0, size=(classes, comps, dim, 1))[..., 0]
    covs = np.zeros((classes, comps, dim, dim))
    for w in range(classes):
        for c in range(comps):
            factor = rng.uniform(-1.0, 1.0, size=(dim, dim))
            covs[w, c] = factor @ factor.T + (0.5 + rng.uniform()) * np.eye(dim)
    gamma = rng.uniform(0.2, 1.0, size=(classes, classes))
    gamma /= gamma.sum(axis=0, keepdims=True)
    pi = rng.uniform(0.2, 1.0, size=classes)
    pi /= pi.sum()
    dataset = Dataset(features, labels, classes)
    return dataset, weights, means, covs, gamma, pi


HAND_X = np.array([[0.0], [1.5], [-0.7]])
HAND_LABELS = np.array([0, 1, 0])
HAND_WEIGHTS = [[1.0], [1.0]]
HAND_MEANS = [[[-0.5]], [[1.0]]]
HAND_COVS = [[[[0.8]]], [[[1.2]]]]
HAND_GAMMA = [[0.85, 0.2], [0.15, 0.8]]
HAND_PI = [0.6, 0.4]


class TestLogClassDensity:
    def test_single_component_collapse(self):
        params = build_params([[1.0]], [[[0.3]]], [[[[1.7]]]], [[1.0]], [1.0])
        got = log_class_density([0.9], params, 0)
        assert got == pytest.approx(params.components[0][0].log_pdf([0.9]), abs=1e-14)

    def test_duplicate_mixture(self):
        params = build_params(
            [[0.5, 0.5]],
            [[[0.3], [0.3]]],
            [[[[1.7]], [[1.7]]]],
            [[1.0]],
            [1.0],
        )
        got = log_class_density([0.9], params, 0)
        assert got == pytest.approx(params.components[0][0].log_pdf([0.9]), abs=1e-12)

    def test_two_term_scalar_oracle(self):
        weights = [[0.3, 0.7]]
        means = [[[0.0], [4.0]]]
        covs = [[[[1.0]], [[1.0]]]]
        params = build_params(weights, means, covs, [[1.0]], [1.0])
        want = math.log(oracles.class_density([0.0], weights[0], means[0], covs[0]))
        assert log_class_density([0.0], params, 0) == pytest.approx(want, abs=1e-12)


class TestEStep:
    def test_identity_gamma_pins_the_observed_class(self):
        dataset = Dataset(HAND_X, HAND_LABELS, 2)
        params = build_params(HAND_WEIGHTS, HAND_MEANS, HAND_COVS, np.eye(2), HAND_PI)
        resp = e_step(dataset, params)
        np.testing.assert_allclose(resp.q[HAND_LABELS == 0], [[1.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(resp.q[HAND_LABELS == 1], [[0.0, 1.0]])

    def test_total_symmetry_gives_uniform_posterior(self):
        dataset = Dataset(HAND_X, HAND_LABELS, 2)
        params = build_params(
            [[1.0], [1.0]],
            [[[0.5]], [[0.5]]],
            [[[[1.0]]], [[[1.0]]]],
            np.full((2, 2), 0.5),
            [0.5, 0.5],
        )
        resp = e_step(dataset, params)
        np.testing.assert_allclose(resp.q, 0.5, atol=1e-14)

    def test_matches_scalar_oracle(self):
        dataset = Dataset(HAND_X, HAND_LABELS, 2)
        params = build_params(HAND_WEIGHTS, HAND_MEANS, HAND_COVS, HAND_GAMMA, HAND_PI)
        resp = e_step(dataset, params)
        q, h = oracles.responsibilities(
            HAND_X, HAND_LABELS, HAND_WEIGHTS, HAND_MEANS, HAND_COVS, HAND_GAMMA, HAND_PI
        )
        np.testing.assert_allclose(resp.q, q, atol=1e-12)
        np.testing.assert_allclose(resp.h, h, atol=1e-12)
        resp.validate()

    def test_collapse_detected(self):
        dataset = Dataset(HAND_X, HAND_LABELS, 2)
        # Observed label 0 is unreachable from every class.
        params = build_params(
            HAND_WEIGHTS, HAND_MEANS, HAND_COVS, [[0.0, 0.0], [1.0, 1.0]], HAND_PI
        )
        with pytest.raises(NumericalCollapse) as excinfo:
            e_step(dataset, params)
        assert excinfo.value.sample_index == 0


class TestMStep:
    def test_one_hot_clean_labels(self):
        features = np.array([[0.0], [2.0], [10.0], [12.0]])
        labels = np.array([0, 0, 1, 1])
        dataset = Dataset(features, labels, 2)
        q = np.eye(2)[labels]
        h = np.ones((4, 2, 1))
        params = m_step(dataset, Responsibilities(q=q, h=h), ridge=0.0)
        np.testing.assert_allclose(params.gamma, np.eye(2))
        np.testing.assert_allclose(params.components[0][0].mean, [1.0])
        np.testing.assert_allclose(params.components[1][0].mean, [11.0])

    def test_uniform_posterior_gives_uniform_priors(self):
        features = np.array([[0.0], [2.0], [10.0], [12.0]])
        dataset = Dataset(features, np.array([0, 0, 1, 1]), 2)
        q = np.full((4, 2), 0.5)
        h = np.ones((4, 2, 1))
        params = m_step(dataset, Responsibilities(q=q, h=h), ridge=0.0)
        np.testing.assert_allclose(params.pi, [0.5, 0.5])

    def test_matches_scalar_oracle_single_component(self):
        features = np.array([[0.0], [2.0], [1.0], [3.0]])
        labels = np.array([0, 0, 1, 1])
        dataset = Dataset(features, labels, 2)
        q = np.array([[0.9, 0.1], [0.7, 0.3], [0.4, 0.6], [0.2, 0.8]])
        h = np.ones((4, 2, 1))
        params = m_step(dataset, Responsibilities(q=q, h=h), ridge=0.0)
        means, covs, weights, gamma, pi = oracles.updates(features, labels, q, h)
        for w in range(2):
            np.testing.assert_allclose(params.components[w][0].mean, means[w, 0], atol=1e-12)
            np.testing.assert_allclose(
                params.components[w][0].covariance, covs[w, 0], atol=1e-12
            )
        np.testing.assert_allclose(params.weights, weights, atol=1e-12)
        np.testing.assert_allclose(params.gamma, gamma, atol=1e-12)
        np.testing.assert_allclose(params.pi, pi, atol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_full_em_step_matches_oracle(self, seed):
        dataset, weights, means, covs, gamma, pi = random_instance(seed)
        params = build_params(weights, means, covs, gamma, pi)
        resp = e_step(dataset, params)
        q, h = oracles.responsibilities(
            dataset.features, dataset.observed_labels, weights, means, covs, gamma, pi
        )
        np.testing.assert_allclose(resp.q, q, atol=1e-12)
        np.testing.assert_allclose(resp.h, h, atol=1e-12)
        new = m_step(dataset, resp, ridge=0.0)
        o_means, o_covs, o_weights, o_gamma, o_pi = oracles.updates(
            dataset.features, dataset.observed_labels, q, h
        )
        for w in range(2):
            for c in range(params.n_components):
                np.testing.assert_allclose(
                    new.components[w][c].mean, o_means[w, c], atol=1e-12
                )
                np.testing.assert_allclose(
                    new.components[w][c].covariance, o_covs[w, c], atol=1e-12
                )
        np.testing.assert_allclose(new.weights, o_weights, atol=1e-12)
        np.testing.assert_allclose(new.gamma, o_gamma, atol=1e-12)
        np.testing.assert_allclose(new.pi, o_pi, atol=1e-12)

    def test_dead_component_is_revived_with_warning(self):
        features = np.array([[0.0], [1.0], [4.0], [5.0]])
        labels = np.array([0, 0, 1, 1])
        dataset = Dataset(features, labels, 2)
        q = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        h = np.zeros((4, 2, 2))
        h[:, :, 0] = 1.0  # second component of each class gets zero mass
        with pytest.warns(DeadComponentWarning):
            params = m_step(dataset, Responsibilities(q=q, h=h), ridge=0.0)
        params.validate()
        assert np.all(params.weights[:, 1] > 0.0)
        np.testing.assert_allclose(params.weights.sum(axis=1), 1.0)


class TestLogLikelihood:
    def test_single_sample_single_class(self):
        dataset = Dataset(np.array([[0.4]]), np.array([0]), 1)
        params = build_params([[1.0]], [[[0.0]]], [[[[1.0]]]], [[1.0]], [1.0])
        assert log_likelihood(dataset, params) == pytest.approx(
            params.components[0][0].log_pdf([0.4]), abs=1e-14
        )

    def test_duplicating_samples_doubles_exactly(self):
        dataset = Dataset(HAND_X, HAND_LABELS, 2)
        params = build_params(HAND_WEIGHTS, HAND_MEANS, HAND_COVS, HAND_GAMMA, HAND_PI)
        doubled = Dataset(
            np.concatenate([HAND_X, HAND_X]), np.concatenate([HAND_LABELS, HAND_LABELS]), 2
        )
        assert log_likelihood(doubled, params) == 2.0 * log_likelihood(dataset, params)

    def test_matches_scalar_oracle(self):
        dataset = Dataset(HAND_X, HAND_LABELS, 2)
        params = build_params(HAND_WEIGHTS, HAND_MEANS, HAND_COVS, HAND_GAMMA, HAND_PI)
        want = oracles.log_likelihood(
            HAND_X, HAND_LABELS, HAND_WEIGHTS, HAND_MEANS, HAND_COVS, HAND_GAMMA, HAND_PI
        )
        assert log_likelihood(dataset, params) == pytest.approx(want, abs=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_bound_plus_entropy_is_tight(self, seed):
        dataset, weights, means, covs, gamma, pi = random_instance(seed + 50, n=5)
        params = build_params(weights, means, covs, gamma, pi)
        resp = e_step(dataset, params)
        want = log_likelihood(dataset, params)
        got = oracles.elbo_plus_entropy(
            dataset.features,
            dataset.observed_labels,
            weights,
            means,
            covs,
            gamma,
            pi,
            resp.q,
            resp.h,
        )
        assert got == pytest.approx(want, rel=1e-8, abs=1e-10)


class TestJointPosteriorBridge:
    @pytest.mark.parametrize("seed", range(4))
    def test_factorized_posteriors_match_joint_form(self, seed):
        dataset, weights, means, covs, gamma, pi = random_instance(seed + 80, n=5)
        params = build_params(weights, means, covs, gamma, pi)
        resp = e_step(dataset, params)
        joint = resp.q[:, :, None] * resp.h
        for i in range(dataset.n):
            want = oracles.joint_posterior(
                dataset.features[i],
                dataset.observed_labels[i],
                weights,
                means,
                covs,
                gamma,
                pi,
            )
            np.testing.assert_allclose(joint[i], want, atol=1e-10)

    def test_moment_updates_agree_with_joint_weights(self):
        dataset, weights, means, covs, gamma, pi = random_instance(97, n=6)
        params = build_params(weights, means, covs, gamma, pi)
        resp = e_step(dataset, params)
        new = m_step(dataset, resp, ridge=0.0)
        joint = resp.q[:, :, None] * resp.h
        for w in range(2):
            for c in range(joint.shape[2]):
                mean, cov = oracles.weighted_mean_cov(dataset.features, joint[:, w, c])
                np.testing.assert_allclose(new.components[w][c].mean, mean, atol=1e-10)
                np.testing.assert_allclose(new.components[w][c].covariance, cov, atol=1e-10)
        # The flip-matrix update is the column normalization of the per-observed-
        # label posterior mass, which the joint weights reproduce after summing
        # out the component index.
        group = np.zeros((2, 2))
        for i in range(dataset.n):
            group[dataset.observed_labels[i]] += joint[i].sum(axis=1)
        np.testing.assert_allclose(new.gamma, group / group.sum(axis=0), atol=1e-10)


class TestFit:
    def make_noisy(self, seed, n=200, separation=8.0, rate=0.4):
        clean = generate(
            SynthSpec(n=n, dim=2, class_count=2, mean_separation=separation, seed=seed)
        )
        if rate == 0.0:
            return clean
        return inject_noise(clean, NoiseSpec.symmetric(rate, seed=seed + 1))

    def test_clean_separable_recovers_identity_gamma(self):
        dataset = self.make_noisy(seed=1, rate=0.0)
        report = fit(dataset, 1, FitConfig(seed=0))
        assert np.diag(report.final_params.gamma).min() >= 0.98

    def test_twenty_percent_flips_recover_gamma_near_point_eight(self):
        dataset = self.make_noisy(seed=2, rate=0.4)  # redraw rate 0.4 = ~20% flips
        report = fit(dataset, 1, FitConfig(seed=0))
        diag = np.diag(report.final_params.gamma)
        assert np.all(diag >= 0.70) and np.all(diag <= 0.90)

    @pytest.mark.parametrize("seed", range(10))
    def test_trace_monotone_over_seeds(self, seed):
        dataset = self.make_noisy(seed=seed, n=120, rate=0.3)
        report = fit(dataset, 1, FitConfig(seed=seed, max_iters=40))
        report.validate()
        trace = report.loglik_trace
        drops = trace[1:] - trace[:-1]
        assert np.all(drops >= -1e-8 * (1.0 + np.abs(trace[:-1])))

    def test_deterministic_fit(self):
        dataset = self.make_noisy(seed=7)
        a = fit(dataset, 2, FitConfig(seed=3))
        b = fit(dataset, 2, FitConfig(seed=3))
        np.testing.assert_array_equal(a.loglik_trace, b.loglik_trace)
        np.testing.assert_array_equal(a.final_params.gamma, b.final_params.gamma)
        np.testing.assert_array_equal(a.final_params.pi, b.final_params.pi)
        assert a.iterations_run == b.iterations_run
        assert a.converged == b.converged

    def test_callback_sees_every_iteration(self):
        dataset = self.make_noisy(seed=4, n=100)
        seen = []
        report = fit(
            dataset,
            1,
            FitConfig(seed=0, max_iters=15),
            callback=lambda t, params, ll: seen.append((t, ll)),
        )
        assert len(seen) == report.iterations_run
        assert [ll for _, ll in seen] == report.loglik_trace.tolist()

    def test_monotonicity_guard_on_fabricated_trace(self):
        report = FitReport(
            loglik_trace=np.array([-10.0, -9.0, -9.5]),
            iterations_run=3,
            converged=False,
            final_params=build_params([[1.0]], [[[0.0]]], [[[[1.0]]]], [[1.0]], [1.0]),
        )
        with pytest.raises(MonotonicityViolation):
            report.validate()


class TestPermutationEquivariance:
    @staticmethod
    def permute(params, order):
        order = list(order)
        return GmdaParams(
            weights=params.weights[order],
            components=tuple(params.components[i] for i in order),
            gamma=params.gamma[np.ix_(order, order)],
            pi=params.pi[order],
        )

    def test_two_class_swap_is_exact(self):
        dataset, weights, means, covs, gamma, pi = random_instance(123, n=20, dim=2)
        params = build_params(weights, means, covs, gamma, pi)
        swapped_params = self.permute(params, [1, 0])
        swapped_dataset = Dataset(
            dataset.features, 1 - dataset.observed_labels, 2
        )
        resp = e_step(dataset, params)
        resp_swapped = e_step(swapped_dataset, swapped_params)
        np.testing.assert_array_equal(resp_swapped.q, resp.q[:, ::-1])
        np.testing.assert_array_equal(resp_swapped.h, resp.h[:, ::-1, :])

        new = m_step(dataset, resp, ridge=0.0)
        new_swapped = m_step(swapped_dataset, resp_swapped, ridge=0.0)
        np.testing.assert_array_equal(new_swapped.pi, new.pi[::-1])
        np.testing.assert_array_equal(new_swapped.weights, new.weights[::-1])
        np.testing.assert_array_equal(
            new_swapped.gamma, new.gamma[np.ix_([1, 0], [1, 0])]
        )
        for w in range(2):
            for c in range(2):
                np.testing.assert_array_equal(
                    new_swapped.components[1 - w][c].mean, new.components[w][c].mean
                )

        report = fit(dataset, 2, FitConfig(seed=0, max_iters=10), initial=params)
        report_swapped = fit(
            swapped_dataset, 2, FitConfig(seed=0, max_iters=10), initial=swapped_params
        )
        np.testing.assert_array_equal(report_swapped.loglik_trace, report.loglik_trace)
        np.testing.assert_array_equal(
            report_swapped.final_params.pi, report.final_params.pi[::-1]
        )


class TestPredict:
    def symmetric_params(self):
        return build_params(
            [[1.0], [1.0]],
            [[[0.0]], [[0.0]]],
            [[[[1.0]]], [[[1.0]]]],
            [[0.9, 0.1], [0.1, 0.9]],
            [0.5, 0.5],
        )

    def test_identical_densities_give_uniform_posterior(self):
        np.testing.assert_allclose(
            predict_posterior([0.3], self.symmetric_params()), [0.5, 0.5], atol=1e-14
        )

    def test_dominant_class_at_its_mean(self):
        params = build_params(
            [[1.0], [1.0]],
            [[[0.0]], [[30.0]]],
            [[[[1.0]]], [[[1.0]]]],
            np.eye(2),
            [0.5, 0.5],
        )
        assert predict_posterior([0.0], params)[0] > 0.999

    def test_matches_scalar_oracle(self):
        dataset, weights, means, covs, gamma, pi = random_instance(31, n=4)
        params = build_params(weights, means, covs, gamma, pi)
        for x in dataset.features:
            np.testing.assert_allclose(
                predict_posterior(x, params),
                oracles.posterior(x, weights, means, covs, pi),
                atol=1e-12,
            )

    def test_tie_breaks_to_lowest_index(self):
        assert predict_label([0.3], self.symmetric_params()) == 0

    def test_argmax_label(self):
        params = build_params(
            [[1.0], [1.0]],
            [[[0.0]], [[3.0]]],
            [[[[1.0]]], [[[1.0]]]],
            np.eye(2),
            [0.5, 0.5],
        )
        assert predict_label([2.9], params) == 1
        np.testing.assert_array_equal(
            predict_label(np.array([[0.1], [2.9]]), params), [0, 1]
        )

    def test_dimension_mismatch(self):
        params = self.symmetric_params()
        with pytest.raises(DimensionMismatch):
            predict_posterior([0.1, 0.2], params)
        with pytest.raises(DimensionMismatch):
            log_class_density([0.1, 0.2], params, 0)


class TestSingleGaussianMode:
    def test_bit_identical_to_general_fit(self):
        clean = generate(SynthSpec(n=150, dim=2, class_count=2, mean_separation=7.0, seed=9))
        dataset = inject_noise(clean, NoiseSpec.symmetric(0.3, seed=10))
        config = FitConfig(seed=5)
        a = fit_single_gaussian(dataset, config)
        b = fit(dataset, 1, config)
        np.testing.assert_array_equal(a.loglik_trace, b.loglik_trace)
        np.testing.assert_array_equal(a.final_params.gamma, b.final_params.gamma)
        np.testing.assert_array_equal(a.final_params.pi, b.final_params.pi)
        for row_a, row_b in zip(a.final_params.components, b.final_params.components):
            np.testing.assert_array_equal(row_a[0].mean, row_b[0].mean)
            np.testing.assert_array_equal(row_a[0].covariance, row_b[0].covariance)

    @pytest.mark.parametrize("seed", range(5))
    def test_m_step_matches_weighted_estimates(self, seed):
        rng = np.random.default_rng(seed + 300)
        n, dim = int(rng.integers(8, 50)), int(rng.integers(1, 4))
        features = rng.standard_normal((n, dim)) * 2.0
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        dataset = Dataset(features, labels, 2)
        q = rng.uniform(0.05, 1.0, size=(n, 2))
        q /= q.sum(axis=1, keepdims=True)
        resp = Responsibilities(q=q, h=np.ones((n, 2, 1)))
        params = m_step(dataset, resp, ridge=0.0)
        for w in range(2):
            mean, cov = oracles.weighted_mean_cov(features, q[:, w])
            np.testing.assert_allclose(params.components[w][0].mean, mean, atol=1e-10)
            np.testing.assert_allclose(params.components[w][0].covariance, cov, atol=1e-10)

    def test_uniform_weights_give_global_mean(self):
        rng = np.random.default_rng(77)
        features = rng.standard_normal((20, 2))
        dataset = Dataset(features, rng.integers(0, 2, size=20), 2)
        q = np.full((20, 2), 0.5)
        params = m_step(dataset, Responsibilities(q=q, h=np.ones((20, 2, 1))), ridge=0.0)
        for w in range(2):
            np.testing.assert_allclose(
                params.components[w][0].mean, features.mean(axis=0), atol=1e-12
            )


class TestSerialization:
    def test_round_trip_is_value_exact(self):
        dataset, weights, means, covs, gamma, pi = random_instance(55, n=6, dim=2)
        params = m_step(dataset, e_step(dataset, build_params(weights, means, covs, gamma, pi)))
        doc = json.loads(json.dumps(params_to_dict(params)))
        restored = params_from_dict(doc)
        np.testing.assert_array_equal(restored.pi, params.pi)
        np.testing.assert_array_equal(restored.gamma, params.gamma)
        np.testing.assert_array_equal(restored.weights, params.weights)
        for row_a, row_b in zip(restored.components, params.components):
            for comp_a, comp_b in zip(row_a, row_b):
                np.testing.assert_array_equal(comp_a.mean, comp_b.mean)
                np.testing.assert_array_equal(comp_a.covariance, comp_b.covariance)
                np.testing.assert_array_equal(comp_a.chol, comp_b.chol)
                assert comp_a.log_det == comp_b.log_det

    def test_document_shape(self):
        params = build_params(HAND_WEIGHTS, HAND_MEANS, HAND_COVS, HAND_GAMMA, HAND_PI)
        doc = params_to_dict(params)
        assert doc["k"] == 2 and doc["m"] == 1 and doc["d"] == 1
        assert len(doc["classes"]) == 2
        assert doc["gamma"] == params.gamma.tolist()
