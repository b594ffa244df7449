"""Weighted objectives, parameter containers, and the gradient checker."""
import numpy as np
import pytest

from cutboot import zoo
from cutboot.core import (
    CutDataset,
    GradientCheckReport,
    ModuleTwoSpec,
    ParameterSplit,
    ValidationError,
    check_gradients,
    m1_value_and_grad,
    m2_value_and_grad,
    weighted_objective_m1,
    weighted_objective_m2,
)

from conftest import LOG_PHI_0


def log_phi(x, sd=1.0):
    return -0.5 * np.log(2.0 * np.pi) - np.log(sd) - 0.5 * (x / sd) ** 2


class TestWeightedObjectiveM1:
    def test_unit_gaussian_at_mode(self, biased_model):
        data1 = np.array([0.5])
        value = weighted_objective_m1(biased_model.module1, data1, [1.0], 0.0, [0.5])
        assert value == pytest.approx(LOG_PHI_0, abs=1e-12)
        assert value == pytest.approx(-0.9189385332046727, abs=1e-10)

    def test_prior_weight_adds_log_density(self, biased_model):
        data1 = np.array([0.5])
        value = weighted_objective_m1(biased_model.module1, data1, [1.0], 1.0, [0.5])
        assert value == pytest.approx(LOG_PHI_0 + log_phi(0.5), abs=1e-12)

    def test_linearity_in_weights(self, biased_model):
        data1 = np.array([0.3])
        one = weighted_objective_m1(biased_model.module1, data1, [1.0], 0.0, [0.9])
        two = weighted_objective_m1(biased_model.module1, data1, [2.0], 0.0, [0.9])
        assert two == pytest.approx(2.0 * one, rel=1e-14)

    def test_weight_validation(self, biased_model):
        data1 = np.array([0.1, 0.2])
        with pytest.raises(ValidationError):
            weighted_objective_m1(biased_model.module1, data1, [1.0], 0.0, [0.0])
        with pytest.raises(ValidationError):
            weighted_objective_m1(biased_model.module1, data1, [1.0, -0.5], 0.0, [0.0])
        with pytest.raises(ValidationError):
            weighted_objective_m1(biased_model.module1, data1, [1.0, np.inf], 0.0, [0.0])

    def test_nan_parameters_rejected(self, biased_model):
        data1 = np.array([0.1])
        with pytest.raises(ValidationError):
            weighted_objective_m1(biased_model.module1, data1, [1.0], 0.0, [np.nan])


class TestWeightedObjectiveM2:
    def test_zero_residual(self, biased_model):
        data2 = np.array([1.0])
        value = weighted_objective_m2(biased_model.module2, data2, [1.0], 0.0,
                                      [0.0], [1.0])
        assert value == pytest.approx(LOG_PHI_0, abs=1e-12)

    def test_zero_weight_leaves_prior_only(self, biased_model):
        data2 = np.array([1.0])
        value = weighted_objective_m2(biased_model.module2, data2, [0.0], 1.0,
                                      [0.0], [1.0])
        assert value == pytest.approx(log_phi(1.0, sd=0.1), abs=1e-12)

    def test_zero_weight_drops_even_infinite_terms(self):
        # A zero weight must remove the observation entirely, even where
        # its own log-likelihood is -inf.
        model = zoo.epi_model(groups=2)
        data2 = np.array([[3.0, 0.0, 1.0], [5.0, 1.0, 1.0]])
        theta1 = np.array([0.0, 0.5])  # group 0 has rate exactly zero
        value = weighted_objective_m2(model.module2, data2, [0.0, 1.0], 0.0,
                                      theta1, [0.1, 0.2])
        assert np.isfinite(value)

    def test_toy_single_observation(self, toy_model):
        data2 = np.array([[3.0, 4.0]])  # columns (x, y)
        value = weighted_objective_m2(toy_model.module2, data2, [1.0], 0.0,
                                      [0.0], [4.0 / 3.0])
        assert value == pytest.approx(LOG_PHI_0, abs=1e-12)

    def test_vector_prior_weight_requires_factorizing_prior(self, toy_model):
        data2 = np.array([[3.0, 4.0]])
        ok = weighted_objective_m2(toy_model.module2, data2, [1.0], [0.5], [0.0], [1.0])
        assert np.isfinite(ok)
        non_fact = ModuleTwoSpec(
            dim=1,
            loglik=toy_model.module2.loglik,
            grad=toy_model.module2.grad,
            grad1=toy_model.module2.grad1,
            logprior=toy_model.module2.logprior,
            logprior_grad=toy_model.module2.logprior_grad,
            prior_factorizes=False,
        )
        with pytest.raises(ValidationError):
            weighted_objective_m2(non_fact, data2, [1.0], [0.5, 0.5], [0.0], [1.0])


class TestFusedClosures:
    def test_m1_matches_objective_and_fd(self, biased_model):
        rng = np.random.default_rng(0)
        data1 = rng.normal(size=40)
        w = rng.exponential(size=40)
        fg = m1_value_and_grad(biased_model.module1, data1, w, 0.7)
        theta = np.array([0.3])
        value, grad = fg(theta)
        assert value == pytest.approx(
            weighted_objective_m1(biased_model.module1, data1, w, 0.7, theta))
        h = 1e-6
        fd = (fg(theta + h)[0] - fg(theta - h)[0]) / (2 * h)
        assert grad[0] == pytest.approx(fd, rel=1e-6)

    def test_m2_matches_objective_and_fd(self, toy_model):
        data2 = zoo.toy_generate(50, rho=0.0, sigma2=1.0, seed=5).data2
        rng = np.random.default_rng(1)
        v = rng.exponential(size=50)
        theta1 = np.array([0.1])
        fg = m2_value_and_grad(toy_model.module2, data2, v, 0.2, theta1)
        theta2 = np.array([1.2])
        value, grad = fg(theta2)
        assert value == pytest.approx(
            weighted_objective_m2(toy_model.module2, data2, v, 0.2, theta1, theta2))
        h = 1e-6
        fd = (fg(theta2 + h)[0] - fg(theta2 - h)[0]) / (2 * h)
        assert grad[0] == pytest.approx(fd, rel=1e-6)


class TestParameterSplit:
    def test_fields_and_stack(self):
        split = ParameterSplit(np.array([1.0, 2.0]), np.array([3.0]))
        assert split.d1 == 2 and split.d2 == 1
        np.testing.assert_array_equal(split.stacked(), [1.0, 2.0, 3.0])

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValidationError):
            ParameterSplit(np.zeros((2, 2)), np.zeros(1))
        with pytest.raises(ValidationError):
            ParameterSplit(np.zeros(0), np.zeros(1))
        with pytest.raises(ValidationError):
            ParameterSplit(np.array([np.nan]), np.zeros(1))


class TestCutDataset:
    def test_sizes_and_alpha(self):
        data = CutDataset(np.zeros((4, 1)), np.zeros((8, 1)))
        assert (data.n1, data.n2) == (4, 8)
        assert data.alpha == pytest.approx(0.5)
        assert not data.paired

    def test_paired_requires_equal_sizes(self):
        with pytest.raises(ValidationError):
            CutDataset(np.zeros((4, 1)), np.zeros((5, 1)), paired=True)

    def test_digest_tracks_content(self):
        a = CutDataset(np.ones((3, 1)), np.zeros((3, 1)))
        b = CutDataset(np.ones((3, 1)), np.zeros((3, 1)))
        c = CutDataset(np.ones((3, 1)) * 2, np.zeros((3, 1)))
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()


class TestCheckGradients:
    def test_toy_modules_pass(self, toy_model, toy_data_small):
        point = ParameterSplit(np.array([0.3]), np.array([1.1]))
        rep1 = check_gradients(toy_model.module1, toy_data_small.data1, point)
        rep2 = check_gradients(toy_model.module2, toy_data_small.data2, point)
        assert isinstance(rep1, GradientCheckReport)
        assert rep1.passed and rep1.max_rel_error < 1e-5
        assert rep2.passed and rep2.max_rel_error < 1e-5
        assert set(rep2.block_errors) == {"theta1", "theta2"}

    def test_logistic_score_at_zero(self, quiet_warnings):
        model = zoo.causal_model(p=2)
        data = zoo.causal_generate(n=200, confounding=0.5, p=2, seed=3)
        beta = np.zeros(model.d1)
        rep = check_gradients(model.module1, data.data1, beta)
        assert rep.passed
        # At beta = 0 every fitted probability is 1/2, so the score is
        # sum_i (z_i - 1/2) x_i.
        z = data.data1[:, 0]
        x = np.column_stack([np.ones(data.n1), data.data1[:, 2:]])
        expected = ((z - 0.5)[:, None] * x).sum(axis=0)
        analytic = model.module1.grad(data.data1, beta).sum(axis=0)
        np.testing.assert_allclose(analytic, expected, rtol=1e-12)

    def test_corrupted_gradient_fails(self, toy_model, toy_data_small):
        broken = ModuleTwoSpec(
            dim=1,
            loglik=toy_model.module2.loglik,
            grad=lambda data, t1, t2: toy_model.module2.grad(data, t1, t2) + 0.1,
            grad1=toy_model.module2.grad1,
            logprior=toy_model.module2.logprior,
            logprior_grad=toy_model.module2.logprior_grad,
        )
        point = ParameterSplit(np.array([0.3]), np.array([1.1]))
        rep = check_gradients(broken, toy_data_small.data2, point)
        assert not rep.passed

    def test_support_boundary_raises(self):
        model = zoo.epi_model(groups=1)
        data1 = np.array([[3.0, 10.0]])
        with pytest.raises(ValidationError):
            check_gradients(model.module1, data1, np.array([1.0 - 1e-9]))
