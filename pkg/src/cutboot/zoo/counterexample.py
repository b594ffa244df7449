"""Bivariate second module where cutting is predictively harmful.

Module 1: x1 ~ N(theta1, 1). Module 2: x2 in R^2 ~ N((theta1, theta2), S)
where S^{-1} = [[1, 0.5], [0.5, 1]]. Independent N(0, 1) priors. The
generating process makes both modules wrong: x1 ~ N(0, sigma^2) and
x2 ~ N(0, S M S) with M = [[0.8, 0.3], [0.3, 0.8]], independent of x1.
Pseudo-true values are theta1* = theta2* = 0; the population information
constants and full module-2 derivative matrices are available in closed
form for prediction-risk comparisons.
"""
from __future__ import annotations

import numpy as np

from ..asymptotics import InfoMatrices
from ..optimize import OptimizerConfig
from ..core import (
    CutDataset,
    CutModel,
    ModuleOneSpec,
    ModuleTwoSpec,
    ParameterSplit,
    ValidationError,
)

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

S_INV = np.array([[1.0, 0.5], [0.5, 1.0]])
S = np.linalg.inv(S_INV)  # [[4/3, -2/3], [-2/3, 4/3]]
M = np.array([[0.8, 0.3], [0.3, 0.8]])
GEN_COV2 = S @ M @ S
_LOGDET_S = float(np.linalg.slogdet(S)[1])


def _ll1(data1, theta1):
    r = data1 - theta1[0]
    return -_HALF_LOG_2PI - 0.5 * r * r


def _grad1(data1, theta1):
    return (data1 - theta1[0])[:, None]


def _hess1(data1, theta1):
    return np.array([[-1.0]])


def _dev(data2, theta1, theta2):
    return data2 - np.array([theta1[0], theta2[0]])


def _ll2(data2, theta1, theta2):
    dev = _dev(data2, theta1, theta2)
    quad = np.einsum("ij,jk,ik->i", dev, S_INV, dev)
    return -2.0 * _HALF_LOG_2PI - 0.5 * _LOGDET_S - 0.5 * quad


def _grad2(data2, theta1, theta2):
    return (_dev(data2, theta1, theta2) @ S_INV)[:, 1:2]


def _grad2_wrt1(data2, theta1, theta2):
    return (_dev(data2, theta1, theta2) @ S_INV)[:, 0:1]


def _hess22(data2, theta1, theta2):
    return np.array([[-S_INV[1, 1]]])


def _hess12(data2, theta1, theta2):
    return np.array([[-S_INV[0, 1]]])


def _hess11(data2, theta1, theta2):
    return np.array([[-S_INV[0, 0]]])


def _std_normal_prior_terms(theta):
    return -_HALF_LOG_2PI - 0.5 * theta ** 2


def _std_normal_prior_grad(theta):
    return -theta


def _init1(data1):
    return np.array([float(np.mean(data1))])


def _init2(data2, theta1):
    return np.array([float(np.mean(data2[:, 1]))])


def counterexample_model() -> CutModel:
    module1 = ModuleOneSpec(dim=1, loglik=_ll1, grad=_grad1,
                            logprior=_std_normal_prior_terms,
                            logprior_grad=_std_normal_prior_grad,
                            prior_factorizes=True, hess=_hess1)
    module2 = ModuleTwoSpec(dim=1, loglik=_ll2, grad=_grad2, grad1=_grad2_wrt1,
                            logprior=_std_normal_prior_terms,
                            logprior_grad=_std_normal_prior_grad,
                            prior_factorizes=True, hess22=_hess22,
                            hess12=_hess12, hess11=_hess11)
    # At the sample sizes this model is meant for (up to 1e5), the
    # default 1e-8 gradient tolerance sits within a factor of two of the
    # float64 stall floor; 1e-6 keeps a wide margin at no practical cost.
    return CutModel(model_id="counterexample", module1=module1, module2=module2,
                    init1=_init1, init2=_init2,
                    default_optimizer=OptimizerConfig(gradient_tolerance=1e-6))


def counterexample_generate(n: int, sigma: float = 1.0, seed: int = 0) -> CutDataset:
    """x1 ~ N(0, sigma^2) and x2 ~ N(0, S M S), independent blocks of size n."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    rng = np.random.default_rng(seed)
    x1 = sigma * rng.standard_normal(n)
    x2 = rng.standard_normal((n, 2)) @ np.linalg.cholesky(GEN_COV2).T
    return CutDataset(data1=x1, data2=x2, paired=False)


def counterexample_pseudo_true() -> ParameterSplit:
    return ParameterSplit(np.array([0.0]), np.array([0.0]))


def counterexample_population_info(sigma: float = 1.0) -> InfoMatrices:
    """Population information constants at the pseudo-true point.

    The module-2 score in (theta1, theta2) is S^{-1} x2 ~ N(0, M), so the
    theta2-block score variance is M[1, 1] = 0.8; curvature blocks are the
    entries of S^{-1}.
    """
    return InfoMatrices(
        I1=[[sigma ** 2]], J1=[[1.0]],
        I2=[[M[1, 1]]], J2=[[S_INV[1, 1]]],
        RJ=[[S_INV[0, 1]]], RI=None,
        alpha=1.0,
        evaluated_at=counterexample_pseudo_true(),
    )


def counterexample_population_risk_matrices():
    """Full module-2 derivative matrices over (theta1, theta2): (If2, Jf2).

    If2 = Var(S^{-1} x2) = M and Jf2 = S^{-1}, so If2 - Jf2 is the constant
    matrix [[-0.2, -0.2], [-0.2, -0.2]].
    """
    return M.copy(), S_INV.copy()
