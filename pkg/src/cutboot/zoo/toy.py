"""Gaussian location/regression pair with a misspecified generator.

Model: z_i ~ N(theta1, 1) in module 1; y_i ~ N(theta1 + theta2 * x_i, 1)
in module 2; independent N(0, 10^2) priors. The generating process is
deliberately different: x ~ N(3, 1) and (z_i, y_i) given x_i is bivariate
normal with mean (0, 1 + x_i) and covariance [[1, rho], [rho, sigma2]].
Pseudo-true values: theta1* = 0, theta2* = 13/10.
"""
from __future__ import annotations

import numpy as np

from ..asymptotics import InfoMatrices
from ..core import (
    CutDataset,
    CutModel,
    GaussianCutStructure,
    ModuleOneSpec,
    ModuleTwoSpec,
    ParameterSplit,
    ValidationError,
)

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_PRIOR_SD = 10.0

# Moments of x ~ N(3, 1) used by the population information constants.
_EX, _EX2, _EX3, _EX4 = 3.0, 10.0, 36.0, 138.0
_THETA2_STAR = (_EX + _EX2) / _EX2  # 13/10


def _ll1(data1, theta1):
    r = data1 - theta1[0]
    return -_HALF_LOG_2PI - 0.5 * r * r


def _grad1(data1, theta1):
    return (data1 - theta1[0])[:, None]


def _hess1(data1, theta1):
    return np.array([[-1.0]])


def _ll2(data2, theta1, theta2):
    r = data2[:, 1] - theta1[0] - theta2[0] * data2[:, 0]
    return -_HALF_LOG_2PI - 0.5 * r * r


def _grad2(data2, theta1, theta2):
    x = data2[:, 0]
    r = data2[:, 1] - theta1[0] - theta2[0] * x
    return (x * r)[:, None]


def _grad2_wrt1(data2, theta1, theta2):
    r = data2[:, 1] - theta1[0] - theta2[0] * data2[:, 0]
    return r[:, None]


def _hess22(data2, theta1, theta2):
    return np.array([[-float(np.mean(data2[:, 0] ** 2))]])


def _hess12(data2, theta1, theta2):
    return np.array([[-float(np.mean(data2[:, 0]))]])


def _hess11(data2, theta1, theta2):
    return np.array([[-1.0]])


def _normal_prior_terms(theta):
    return -_HALF_LOG_2PI - np.log(_PRIOR_SD) - 0.5 * (theta / _PRIOR_SD) ** 2


def _normal_prior_grad(theta):
    return -theta / _PRIOR_SD ** 2


def _init1(data1):
    return np.array([float(np.mean(data1))])


def _init2(data2, theta1):
    x, y = data2[:, 0], data2[:, 1]
    denom = float(x @ x)
    return np.array([float(x @ (y - theta1[0])) / denom if denom > 0 else 0.0])


def _response(data2):
    return data2[:, 1]


def _carrier(data2):
    return np.ones(data2.shape[0])


def _design(data2):
    return data2[:, 0][:, None]


def _module1_posterior(data1, size, rng):
    prec = data1.size + 1.0 / _PRIOR_SD ** 2
    mean = float(np.sum(data1)) / prec
    return (mean + rng.standard_normal(size) / np.sqrt(prec))[:, None]


def toy_model() -> CutModel:
    module1 = ModuleOneSpec(dim=1, loglik=_ll1, grad=_grad1,
                            logprior=_normal_prior_terms,
                            logprior_grad=_normal_prior_grad,
                            prior_factorizes=True, hess=_hess1)
    module2 = ModuleTwoSpec(dim=1, loglik=_ll2, grad=_grad2, grad1=_grad2_wrt1,
                            logprior=_normal_prior_terms,
                            logprior_grad=_normal_prior_grad,
                            prior_factorizes=True, hess22=_hess22,
                            hess12=_hess12, hess11=_hess11)
    gaussian = GaussianCutStructure(
        model_sd1=1.0, prior1_mean=0.0, prior1_sd=_PRIOR_SD,
        model_sd2=1.0, prior2_mean=np.zeros(1), prior2_sd=np.full(1, _PRIOR_SD),
        response=_response, carrier=_carrier, design=_design,
    )
    return CutModel(model_id="toy", module1=module1, module2=module2,
                    init1=_init1, init2=_init2, gaussian_cut=gaussian,
                    module1_posterior=_module1_posterior)


def toy_generate(n: int, rho: float = 0.0, sigma2: float = 1.0,
                 seed: int = 0) -> CutDataset:
    """Draw n paired observations from the misspecified generating process."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if sigma2 <= 0 or sigma2 - rho ** 2 <= 0:
        raise ValidationError(
            f"covariance not positive definite: [[1, {rho}], [{rho}, {sigma2}]]"
        )
    rng = np.random.default_rng(seed)
    x = 3.0 + rng.standard_normal(n)
    eps_z = rng.standard_normal(n)
    eps_extra = rng.standard_normal(n)
    z = eps_z
    resid_sd = np.sqrt(sigma2 - rho ** 2)
    y = 1.0 + x + rho * eps_z + resid_sd * eps_extra
    return CutDataset(data1=z, data2=np.column_stack([x, y]), paired=True)


def toy_pseudo_true() -> ParameterSplit:
    return ParameterSplit(np.array([0.0]), np.array([_THETA2_STAR]))


def toy_population_info(rho: float = 0.0, sigma2: float = 1.0) -> InfoMatrices:
    """Population information constants under the generating process.

    With r = y - theta2* x: I2 = E[x^2 r^2] = sigma2*E[x^2] + E[x^2 (1-0.3x)^2],
    RJ = E[x], RI = rho * E[x].
    """
    i2 = sigma2 * _EX2 + (_EX2 - 0.6 * _EX3 + 0.09 * _EX4)
    return InfoMatrices(
        I1=[[1.0]], J1=[[1.0]],
        I2=[[i2]], J2=[[_EX2]],
        RJ=[[_EX]], RI=[[rho * _EX]],
        alpha=1.0,
        evaluated_at=toy_pseudo_true(),
    )
