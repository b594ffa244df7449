"""Two Gaussian location samples sharing a mean, the second one biased.

Module 1: x1 ~ N(theta1, v1) with prior theta1 ~ N(0, 1). Module 2:
x2 ~ N(theta1 + theta2, v2) with prior theta2 ~ N(0, 0.1^2) — theta2 is the
bias of the second sample. By default both model variances are 1; the
``model_variances`` knob builds the correctly-specified variant. The
generating process draws x1 ~ N(0, sigma1_sq) and x2 ~ N(1, sigma2_sq),
so the pseudo-true values are theta1* = 0, theta2* = 1.
"""
from __future__ import annotations

from functools import partial

import numpy as np

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
_PRIOR1_SD = 1.0
_PRIOR2_SD = 0.1


def _ll1(data1, theta1, var):
    r = data1 - theta1[0]
    return -_HALF_LOG_2PI - 0.5 * np.log(var) - 0.5 * r * r / var


def _grad1(data1, theta1, var):
    return ((data1 - theta1[0]) / var)[:, None]


def _hess1(data1, theta1, var):
    return np.array([[-1.0 / var]])


def _ll2(data2, theta1, theta2, var):
    r = data2 - theta1[0] - theta2[0]
    return -_HALF_LOG_2PI - 0.5 * np.log(var) - 0.5 * r * r / var


def _grad2(data2, theta1, theta2, var):
    return ((data2 - theta1[0] - theta2[0]) / var)[:, None]


def _hess_const(data2, theta1, theta2, var):
    return np.array([[-1.0 / var]])


def _prior_terms(theta, sd):
    return -_HALF_LOG_2PI - np.log(sd) - 0.5 * (theta / sd) ** 2


def _prior_grad(theta, sd):
    return -theta / sd ** 2


def _mean_init(data):
    return np.array([float(np.mean(data))])


def _init2(data2, theta1):
    return np.array([float(np.mean(data2)) - theta1[0]])


def _identity_response(data2):
    return np.asarray(data2, dtype=float).reshape(-1)


def _ones(data2):
    return np.ones(np.asarray(data2).shape[0])


def _ones_col(data2):
    return np.ones((np.asarray(data2).shape[0], 1))


def _module1_posterior(data1, size, rng, var):
    prec = data1.size / var + 1.0 / _PRIOR1_SD ** 2
    mean = float(np.sum(data1)) / var / prec
    return (mean + rng.standard_normal(size) / np.sqrt(prec))[:, None]


def biased_model(model_variances=(1.0, 1.0)) -> CutModel:
    """The location-pair cut model; ``model_variances`` sets (v1, v2)."""
    v1, v2 = float(model_variances[0]), float(model_variances[1])
    if v1 <= 0 or v2 <= 0:
        raise ValidationError("model variances must be positive")
    module1 = ModuleOneSpec(
        dim=1,
        loglik=partial(_ll1, var=v1),
        grad=partial(_grad1, var=v1),
        logprior=partial(_prior_terms, sd=_PRIOR1_SD),
        logprior_grad=partial(_prior_grad, sd=_PRIOR1_SD),
        prior_factorizes=True,
        hess=partial(_hess1, var=v1),
    )
    module2 = ModuleTwoSpec(
        dim=1,
        loglik=partial(_ll2, var=v2),
        grad=partial(_grad2, var=v2),
        grad1=partial(_grad2, var=v2),
        logprior=partial(_prior_terms, sd=_PRIOR2_SD),
        logprior_grad=partial(_prior_grad, sd=_PRIOR2_SD),
        prior_factorizes=True,
        hess22=partial(_hess_const, var=v2),
        hess12=partial(_hess_const, var=v2),
        hess11=partial(_hess_const, var=v2),
    )
    gaussian = GaussianCutStructure(
        model_sd1=np.sqrt(v1), prior1_mean=0.0, prior1_sd=_PRIOR1_SD,
        model_sd2=np.sqrt(v2), prior2_mean=np.zeros(1),
        prior2_sd=np.full(1, _PRIOR2_SD),
        response=_identity_response, carrier=_ones, design=_ones_col,
    )
    return CutModel(model_id="biased", module1=module1, module2=module2,
                    init1=_mean_init, init2=_init2, gaussian_cut=gaussian,
                    module1_posterior=partial(_module1_posterior, var=v1))


def biased_generate(n1: int, n2: int, sigma1_sq: float = 1.0,
                    sigma2_sq: float = 1.0, seed: int = 0) -> CutDataset:
    """x1 ~ N(0, sigma1_sq) (n1 draws), x2 ~ N(1, sigma2_sq) (n2 draws)."""
    if n1 < 1 or n2 < 1:
        raise ValidationError("n1 and n2 must be >= 1")
    if sigma1_sq <= 0 or sigma2_sq <= 0:
        raise ValidationError("generator variances must be positive")
    rng = np.random.default_rng(seed)
    x1 = np.sqrt(sigma1_sq) * rng.standard_normal(n1)
    x2 = 1.0 + np.sqrt(sigma2_sq) * rng.standard_normal(n2)
    return CutDataset(data1=x1, data2=x2, paired=False)


def biased_pseudo_true() -> ParameterSplit:
    return ParameterSplit(np.array([0.0]), np.array([1.0]))
