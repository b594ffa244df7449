"""Information-matrix estimation, covariance assembly, calibration, risk."""
import numpy as np
import pytest

from cutboot import zoo
from cutboot.asymptotics import (
    InfoMatrices,
    build_covariance_report,
    calibrate_prior_weights,
    check_psd,
    estimate_info,
    prediction_risk_from_matrices,
    prediction_risk_traces,
    sigma_cut_laplace,
    sigma_scenario1,
    sigma_scenario2,
)
from cutboot.core import (
    CutDataset,
    NumericalError,
    ParameterSplit,
    ValidationError,
)
from cutboot.optimize import fit_mle
from cutboot.zoo.counterexample import M as CE_SCORE_COV
from cutboot.zoo.counterexample import S_INV as CE_CURVATURE


def _info_1d(i1, j1, i2, j2, rj, ri=None, alpha=1.0):
    return InfoMatrices(I1=[[i1]], J1=[[j1]], I2=[[i2]], J2=[[j2]],
                        RJ=[[rj]], RI=None if ri is None else [[ri]],
                        alpha=alpha,
                        evaluated_at=ParameterSplit(np.zeros(1), np.zeros(1)))


def _counterexample_paired_info(sigma):
    # The generator draws the two blocks independently, so the population
    # cross-module score covariance exists and equals zero.
    pop = zoo.counterexample_population_info(sigma)
    return InfoMatrices(I1=pop.I1, J1=pop.J1, I2=pop.I2, J2=pop.J2,
                        RJ=pop.RJ, RI=[[0.0]], alpha=pop.alpha,
                        evaluated_at=pop.evaluated_at)


class TestEstimateInfo:
    def test_gaussian_location_blocks(self, biased_model):
        data = zoo.biased_generate(20000, 100, sigma1_sq=1.0, seed=1)
        info = estimate_info(biased_model, data, zoo.biased_pseudo_true())
        assert info.J1[0, 0] == 1.0
        assert info.I1[0, 0] == pytest.approx(1.0, rel=0.05)
        assert info.RI is None
        assert info.alpha == pytest.approx(200.0)

    def test_toy_curvature_blocks(self, toy_model):
        data = zoo.toy_generate(800, rho=0.5, sigma2=1.0, seed=3)
        info = estimate_info(toy_model, data, zoo.toy_pseudo_true())
        assert info.J2[0, 0] == pytest.approx(10.0, rel=0.05)
        assert info.RJ[0, 0] == pytest.approx(3.0, rel=0.05)
        assert info.RI is not None

    def test_paired_cross_score_tracks_correlation(self, toy_model):
        data = zoo.toy_generate(5000, rho=0.8, sigma2=1.0, seed=4)
        info = estimate_info(toy_model, data, zoo.toy_pseudo_true())
        assert info.RI[0, 0] == pytest.approx(2.4, abs=0.3)

    def test_finite_difference_hessians_match_analytic(self, toy_model):
        import dataclasses

        data = zoo.toy_generate(300, rho=0.5, sigma2=1.0, seed=5)
        at = zoo.toy_pseudo_true()
        exact = estimate_info(toy_model, data, at)
        stripped = dataclasses.replace(
            toy_model,
            module1=dataclasses.replace(toy_model.module1, hess=None),
            module2=dataclasses.replace(toy_model.module2, hess22=None,
                                        hess12=None, hess11=None),
        )
        fd = estimate_info(stripped, data, at)
        for name in ("J1", "J2", "RJ"):
            a, b = getattr(exact, name), getattr(fd, name)
            assert np.allclose(a, b, rtol=1e-4, atol=1e-6), name

    def test_error_shrinks_with_sample_size(self, toy_model):
        at = zoo.toy_pseudo_true()
        errors = []
        for n in (500, 5000, 50000):
            data = zoo.toy_generate(n, rho=0.5, sigma2=1.0, seed=1)
            info = estimate_info(toy_model, data, at)
            errors.append(max(abs(info.J2[0, 0] - 10.0) / 10.0,
                              abs(info.RJ[0, 0] - 3.0) / 3.0,
                              abs(info.I2[0, 0] - 10.82) / 10.82))
        assert errors[0] > errors[1] > errors[2]

    def test_anchor_dimension_checked(self, toy_model):
        data = zoo.toy_generate(20, seed=0)
        with pytest.raises(ValidationError):
            estimate_info(toy_model, data,
                          ParameterSplit(np.zeros(2), np.zeros(1)))

    def test_singular_curvature_raises(self, toy_model):
        # A design column of zeros makes the second-stage curvature vanish.
        data = CutDataset(data1=np.zeros(5),
                          data2=np.column_stack([np.zeros(5), np.ones(5)]),
                          paired=True)
        with pytest.raises(NumericalError, match="information matrix singular"):
            estimate_info(toy_model, data, zoo.toy_pseudo_true())

    def test_non_finite_scores_raise(self, toy_model):
        clean = zoo.toy_generate(5, seed=0)
        data = CutDataset(data1=np.array([np.inf, 1.0, 0.0, 0.5, -1.0]),
                          data2=clean.data2, paired=True)
        with pytest.raises(NumericalError, match="non-finite"):
            estimate_info(toy_model, data, zoo.toy_pseudo_true())


class TestInfoMatricesValidation:
    def test_shape_checks(self):
        with pytest.raises(ValidationError):
            InfoMatrices(I1=np.eye(2), J1=[[1.0]], I2=[[1.0]], J2=[[1.0]],
                         RJ=[[0.0]], RI=None, alpha=1.0,
                         evaluated_at=ParameterSplit(np.zeros(1), np.zeros(1)))
        with pytest.raises(ValidationError):
            _info_1d(1, 1, 1, 1, 0, alpha=0.0)

    def test_cross_block_shape(self):
        with pytest.raises(ValidationError):
            InfoMatrices(I1=[[1.0]], J1=[[1.0]], I2=[[1.0]], J2=[[1.0]],
                         RJ=[[0.0]], RI=np.zeros((2, 1)), alpha=1.0,
                         evaluated_at=ParameterSplit(np.zeros(1), np.zeros(1)))


class TestSigmaScenario1:
    def test_location_pair_closed_form(self):
        # sigma1^2 = 1, sigma2^2 = 0.5, one stage-1 point per ten stage-2.
        sigma = sigma_scenario1(_info_1d(1.0, 1.0, 0.5, 1.0, 1.0, alpha=0.1))
        assert np.allclose(sigma, [[10.0, -10.0], [-10.0, 10.5]], atol=1e-12)

    def test_zero_cross_curvature_decouples_blocks(self):
        sigma = sigma_scenario1(_info_1d(1.0, 1.0, 2.0, 4.0, 0.0))
        assert np.allclose(sigma, [[1.0, 0.0], [0.0, 0.125]], atol=1e-15)

    def test_alpha_scaling_exact(self):
        lo = sigma_scenario1(_info_1d(1.3, 1.1, 2.0, 4.0, 0.7, alpha=1.0))
        hi = sigma_scenario1(_info_1d(1.3, 1.1, 2.0, 4.0, 0.7, alpha=2.0))
        assert hi[0, 0] == lo[0, 0] / 2.0


class TestSigmaScenario2:
    def test_harmful_cut_example(self):
        sigma = sigma_scenario2(_counterexample_paired_info(1.0))
        assert np.allclose(sigma, [[1.0, -0.5], [-0.5, 1.05]], atol=1e-12)

    def test_harmful_cut_example_wide_first_stage(self):
        sigma = sigma_scenario2(_counterexample_paired_info(2.0))
        assert np.allclose(sigma, [[4.0, -2.0], [-2.0, 1.8]], atol=1e-12)

    def test_zero_cross_score_reduces_to_scenario1(self, toy_model):
        data = zoo.toy_generate(400, rho=0.8, sigma2=1.0, seed=6)
        mle = fit_mle(toy_model, data)
        info = estimate_info(toy_model, data,
                             ParameterSplit(mle.theta1_hat, mle.theta2_hat))
        zeroed = InfoMatrices(I1=info.I1, J1=info.J1, I2=info.I2, J2=info.J2,
                              RJ=info.RJ, RI=[[0.0]], alpha=1.0,
                              evaluated_at=info.evaluated_at)
        s2 = sigma_scenario2(zeroed)
        s1 = sigma_scenario1(zeroed)
        assert np.max(np.abs(s2 - s1)) < 1e-12

    def test_symmetry(self, toy_model, toy_data_small):
        mle = fit_mle(toy_model, toy_data_small)
        info = estimate_info(toy_model, toy_data_small,
                             ParameterSplit(mle.theta1_hat, mle.theta2_hat))
        sigma = sigma_scenario2(info)
        assert np.max(np.abs(sigma - sigma.T)) < 1e-12

    def test_requires_paired_information(self):
        with pytest.raises(ValidationError, match="requires paired data"):
            sigma_scenario2(_info_1d(1.0, 1.0, 1.0, 1.0, 0.5, ri=None))


class TestSigmaCutLaplace:
    def test_harmful_cut_example(self):
        sigma = sigma_cut_laplace(zoo.counterexample_population_info(1.0))
        assert np.allclose(sigma, [[1.0, -0.5], [-0.5, 1.25]], atol=1e-12)

    def test_ignores_score_covariances(self):
        a = sigma_cut_laplace(_info_1d(1.0, 2.0, 1.0, 3.0, 0.4, alpha=0.5))
        b = sigma_cut_laplace(_info_1d(9.0, 2.0, 7.0, 3.0, 0.4, ri=5.0, alpha=0.5))
        assert np.array_equal(a, b)

    def test_zero_cross_curvature_is_diagonal(self):
        sigma = sigma_cut_laplace(_info_1d(1.0, 2.0, 1.0, 4.0, 0.0, alpha=0.5))
        assert np.allclose(sigma, [[1.0, 0.0], [0.0, 0.25]], atol=1e-15)

    def test_matches_conjugate_posterior_covariance(self, biased_model):
        # Oracle: the exact Gaussian-Gaussian cut posterior. theta1 has
        # precision n1 + 1; theta2 given theta1 has precision n2 + 100.
        n1, n2 = 2000, 20000
        data = zoo.biased_generate(n1, n2, seed=8)
        info = estimate_info(biased_model, data, zoo.biased_pseudo_true())
        laplace = sigma_cut_laplace(info) / n2
        shrink = n2 / (n2 + 100.0)
        var1 = 1.0 / (n1 + 1.0)
        exact = np.array([
            [var1, -shrink * var1],
            [-shrink * var1, shrink ** 2 * var1 + 1.0 / (n2 + 100.0)],
        ])
        assert np.all(np.abs(laplace - exact) <= 0.02 * np.abs(exact))


class TestCovarianceReport:
    def test_paired_report_complete(self, toy_model, toy_data_small):
        mle = fit_mle(toy_model, toy_data_small)
        info = estimate_info(toy_model, toy_data_small,
                             ParameterSplit(mle.theta1_hat, mle.theta2_hat))
        report = build_covariance_report(info)
        for mat in (report.sigma_s1, report.sigma_s2, report.sigma_B):
            assert np.max(np.abs(mat - mat.T)) < 1e-10
            check_psd(mat)
        gap = report.s2_minus_B()
        assert np.allclose(gap, report.sigma_s2 - report.sigma_B)
        payload = report.to_json_dict()
        for key in ("alpha", "d1", "d2", "sigma_s1", "sigma_s2", "sigma_B",
                    "s1_block", "s2_block", "s3_block", "s2_minus_B"):
            assert key in payload

    def test_unpaired_report_marks_missing_pieces(self, biased_model,
                                                  biased_data_small):
        mle = fit_mle(biased_model, biased_data_small)
        info = estimate_info(biased_model, biased_data_small,
                             ParameterSplit(mle.theta1_hat, mle.theta2_hat))
        report = build_covariance_report(info)
        assert report.sigma_s2 is None
        assert report.s2_minus_B() is None
        assert report.to_json_dict()["sigma_s2"] is None


class TestCalibration:
    def test_location_pair_recovers_generator_variances(self, biased_model):
        data = zoo.biased_generate(20000, 20000, sigma1_sq=1.0, sigma2_sq=0.5,
                                   seed=9)
        mle = fit_mle(biased_model, data)
        info = estimate_info(biased_model, data,
                             ParameterSplit(mle.theta1_hat, mle.theta2_hat))
        w0, v0 = calibrate_prior_weights(info)
        assert w0 == pytest.approx(1.0, abs=0.05)
        assert v0 == pytest.approx(0.5, abs=0.05)

    def test_well_specified_gives_unit_weights(self):
        a = np.array([[2.0, 0.3], [0.3, 1.0]])
        info = InfoMatrices(I1=a, J1=a, I2=a, J2=a, RJ=np.zeros((2, 2)),
                            RI=None, alpha=1.0,
                            evaluated_at=ParameterSplit(np.zeros(2), np.zeros(2)))
        w0, v0 = calibrate_prior_weights(info)
        assert np.allclose(w0, [1.0, 1.0], atol=1e-10)
        assert np.allclose(v0, [1.0, 1.0], atol=1e-10)

    def test_diagonal_mismatch(self):
        info = InfoMatrices(I1=np.diag([4.0, 1.0]), J1=np.diag([2.0, 1.0]),
                            I2=np.eye(2), J2=np.eye(2), RJ=np.zeros((2, 2)),
                            RI=None, alpha=1.0,
                            evaluated_at=ParameterSplit(np.zeros(2), np.zeros(2)))
        w0, v0 = calibrate_prior_weights(info)
        assert np.allclose(w0, [2.0, 1.0], atol=1e-12)
        trace_w0, _ = calibrate_prior_weights(info, prior1_factorizes=False)
        assert trace_w0 == pytest.approx(3.0, abs=1e-12)

    def test_indefinite_score_covariance_rejected(self):
        info = _info_1d(-1.0, 1.0, 1.0, 1.0, 0.0)
        with pytest.raises(NumericalError):
            calibrate_prior_weights(info)


class TestPredictionRisk:
    def test_population_traces(self):
        gap_if2, gap_jf2 = zoo.counterexample_population_risk_matrices()
        sigma_B = sigma_cut_laplace(zoo.counterexample_population_info(1.0))
        for sigma, expected in ((sigma_B, -0.25),
                                (sigma_scenario2(_counterexample_paired_info(1.0)), -0.21),
                                (sigma_scenario2(_counterexample_paired_info(2.0)), -0.36)):
            terms = prediction_risk_from_matrices(gap_if2, gap_jf2, sigma_B, sigma)
            assert terms.trace_pb == pytest.approx(expected, abs=1e-12)
        assert prediction_risk_from_matrices(
            gap_if2, gap_jf2, sigma_B, sigma_B).trace_bayes == pytest.approx(-0.25, abs=1e-12)

    def test_empirical_traces_near_population(self):
        model = zoo.counterexample_model()
        data = zoo.counterexample_generate(20000, sigma=1.0, seed=10)
        sigma_B = sigma_cut_laplace(zoo.counterexample_population_info(1.0))
        sigma_pb = sigma_scenario2(_counterexample_paired_info(1.0))
        terms = prediction_risk_traces(model, data,
                                       zoo.counterexample_pseudo_true(),
                                       sigma_B, sigma_pb)
        assert terms.trace_bayes == pytest.approx(-0.25, abs=0.05)
        assert terms.trace_pb == pytest.approx(-0.21, abs=0.05)
        assert np.allclose(terms.jf2, CE_CURVATURE)
        assert np.allclose(terms.if2, CE_SCORE_COV, atol=0.05)
        payload = terms.to_json_dict()
        assert set(payload) == {"if2", "jf2", "trace_bayes", "trace_pb"}

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            prediction_risk_from_matrices(np.eye(2), np.eye(2),
                                          np.eye(3), np.eye(2))

    def test_empirical_pipeline_reproduces_population_traces(self):
        # Full chain (fit -> info -> covariances -> traces) on simulated
        # data; the two blocks are independent, so the independent-data
        # sampler covariance is the relevant one.
        model = zoo.counterexample_model()
        results = {}
        for sigma in (1.0, 2.0):
            data = zoo.counterexample_generate(100_000, sigma=sigma, seed=31)
            mle = fit_mle(model, data)
            at = ParameterSplit(mle.theta1_hat, mle.theta2_hat)
            info = estimate_info(model, data, at)
            terms = prediction_risk_traces(model, data, at,
                                           sigma_cut_laplace(info),
                                           sigma_scenario1(info))
            results[sigma] = terms
        assert results[1.0].trace_bayes == pytest.approx(-0.25, abs=0.02)
        assert results[1.0].trace_pb == pytest.approx(-0.21, abs=0.02)
        assert results[2.0].trace_pb == pytest.approx(-0.36, abs=0.02)
