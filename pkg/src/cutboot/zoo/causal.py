"""Propensity-score stratification as a two-module cut model.

Module 1 is a logistic regression of treatment z on an intercept and p
standardized covariates. Module 2 regresses the outcome y on treatment and
propensity-quintile indicators: for each module-2 evaluation the fitted
propensities s = logistic([1, x] theta1) are recomputed and split at their
empirical 0.2/0.4/0.6/0.8 quantiles, so the strata move with theta1.
theta2 = (treatment effect, stratum-1 mean, four stratum offsets,
log residual sd). Both priors are flat.

Data rows are (z, y, x_1..x_p); both modules read the same matrix.
"""
from __future__ import annotations

import warnings
from functools import partial

import numpy as np

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
N_STRATA = 5
D2 = 2 + (N_STRATA - 1) + 1  # treatment, stratum-1 mean, 4 offsets, log sd


def _covariates(data, p):
    return np.column_stack([np.ones(data.shape[0]), data[:, 2:2 + p]])


def _ll1(data, theta1, p):
    eta = _covariates(data, p) @ theta1
    return data[:, 0] * eta - np.logaddexp(0.0, eta)


def _grad1(data, theta1, p):
    X = _covariates(data, p)
    eta = X @ theta1
    resid = data[:, 0] - 1.0 / (1.0 + np.exp(-eta))
    return resid[:, None] * X


def _hess1(data, theta1, p):
    X = _covariates(data, p)
    s = 1.0 / (1.0 + np.exp(-(X @ theta1)))
    w = s * (1.0 - s)
    return -(X.T * w) @ X / data.shape[0]


def _stratum_design(data, theta1, p):
    """Treatment + stratum indicator design, recomputed from theta1."""
    s = 1.0 / (1.0 + np.exp(-(_covariates(data, p) @ theta1)))
    cuts = np.quantile(s, [0.2, 0.4, 0.6, 0.8])
    idx = np.searchsorted(cuts, s, side="right")
    z = data[:, 0]
    design = np.zeros((data.shape[0], 2 + N_STRATA - 1))
    design[:, 0] = z
    design[:, 1] = 1.0
    for k in range(1, N_STRATA):
        design[:, 1 + k] = idx == k
    for k in range(N_STRATA):
        members = idx == k
        if members.any() and (np.all(z[members] > 0.5) or np.all(z[members] < 0.5)):
            warnings.warn(
                f"propensity stratum {k + 1} contains only "
                f"{'treated' if z[members][0] > 0.5 else 'untreated'} units"
            )
    return design


def _ll2(data, theta1, theta2, p):
    D = _stratum_design(data, theta1, p)
    mu = D @ theta2[:-1]
    log_sd = theta2[-1]
    r = data[:, 1] - mu
    return -log_sd - _HALF_LOG_2PI - 0.5 * r * r * np.exp(-2.0 * log_sd)


def _grad2(data, theta1, theta2, p):
    D = _stratum_design(data, theta1, p)
    r = data[:, 1] - D @ theta2[:-1]
    inv_var = np.exp(-2.0 * theta2[-1])
    out = np.empty((data.shape[0], theta2.size))
    out[:, :-1] = D * (r * inv_var)[:, None]
    out[:, -1] = -1.0 + r * r * inv_var
    return out


def _grad2_wrt1(data, theta1, theta2, p):
    # The strata are piecewise constant in theta1, so the derivative
    # vanishes almost everywhere.
    return np.zeros((data.shape[0], theta1.size))


def _hess22(data, theta1, theta2, p):
    D = _stratum_design(data, theta1, p)
    n = data.shape[0]
    r = data[:, 1] - D @ theta2[:-1]
    inv_var = np.exp(-2.0 * theta2[-1])
    d = theta2.size
    H = np.zeros((d, d))
    H[:-1, :-1] = -(D.T @ D) * inv_var / n
    cross = -2.0 * (D.T @ (r * inv_var)) / n
    H[:-1, -1] = cross
    H[-1, :-1] = cross
    H[-1, -1] = -2.0 * float(np.mean(r * r)) * inv_var
    return H


def _hess12(data, theta1, theta2, p):
    return np.zeros((theta1.size, theta2.size))


def _hess11(data, theta1, theta2, p):
    return np.zeros((theta1.size, theta1.size))


def _flat_prior_terms_d(theta):
    return np.zeros_like(theta)


def _flat_prior_grad(theta):
    return np.zeros_like(theta)


def _init1(data, p):
    return np.zeros(p + 1)


def _init2(data, theta1, p):
    z, y = data[:, 0], data[:, 1]
    treated = z > 0.5
    effect = float(y[treated].mean() - y[~treated].mean()) if treated.any() and (~treated).any() else 0.0
    out = np.zeros(D2)
    out[0] = effect
    out[1] = float(y[~treated].mean()) if (~treated).any() else float(y.mean())
    out[-1] = np.log(max(float(y.std()), 1e-3))
    return out


def validate_causal_data(data: np.ndarray) -> None:
    z = data[:, 0]
    if not np.all((z == 0) | (z == 1)):
        raise ValidationError("treatment column must be binary 0/1")
    if np.all(z == z[0]):
        raise ValidationError("treatment column is constant; both arms are required")


def causal_model(p: int = 3) -> CutModel:
    """Cut model with ``p`` covariates (module 1 fits p+1 coefficients)."""
    if p < 1:
        raise ValidationError("p must be >= 1")
    module1 = ModuleOneSpec(dim=p + 1, loglik=partial(_ll1, p=p),
                            grad=partial(_grad1, p=p),
                            logprior=_flat_prior_terms_d,
                            logprior_grad=_flat_prior_grad,
                            prior_factorizes=True, hess=partial(_hess1, p=p))
    module2 = ModuleTwoSpec(dim=D2, loglik=partial(_ll2, p=p),
                            grad=partial(_grad2, p=p),
                            grad1=partial(_grad2_wrt1, p=p),
                            logprior=_flat_prior_terms_d,
                            logprior_grad=_flat_prior_grad,
                            prior_factorizes=True,
                            hess22=partial(_hess22, p=p),
                            hess12=partial(_hess12, p=p),
                            hess11=partial(_hess11, p=p))
    # The logistic and stratified-Gaussian objectives reach magnitudes
    # ~1e3 at the intended sample sizes, where float64 line searches stall
    # around 1e-6 on the gradient sup-norm; 2e-5 leaves a safe margin.
    return CutModel(model_id="causal", module1=module1, module2=module2,
                    init1=partial(_init1, p=p), init2=partial(_init2, p=p),
                    default_optimizer=OptimizerConfig(gradient_tolerance=2e-5))


def causal_generate(n: int, confounding: float = 1.0, p: int = 3,
                    treatment_effect: float = 1.0, zero_inflation: float = 0.0,
                    noise_sd: float = 1.0, seed: int = 0) -> CutDataset:
    """Synthetic observational data with tunable confounding.

    Covariates are standard normal; treatment assignment is logistic in
    ``confounding`` times their mean; the outcome adds a linear covariate
    term to the treatment effect. ``zero_inflation`` replaces that fraction
    of outcomes with exact zeros.
    """
    if n < 20:
        raise ValidationError("n must be >= 20")
    if not 0.0 <= zero_inflation < 1.0:
        raise ValidationError("zero_inflation must be in [0, 1)")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    gamma = np.ones(p) / np.sqrt(p)
    eta = confounding * (X @ gamma)
    z = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    y = treatment_effect * z + X @ (0.5 * np.ones(p)) + noise_sd * rng.standard_normal(n)
    if zero_inflation > 0:
        y[rng.uniform(size=n) < zero_inflation] = 0.0
    data = np.column_stack([z, y, X])
    validate_causal_data(data)
    return CutDataset(data1=data, data2=data, paired=True)


def causal_pseudo_true(treatment_effect: float = 1.0, p: int = 3) -> ParameterSplit:
    theta2 = np.zeros(D2)
    theta2[0] = treatment_effect
    return ParameterSplit(np.zeros(p + 1), theta2)


def causal_load_csv(path) -> CutDataset:
    """Read rows (z, y, x1..xp); covariates are standardized on load."""
    raw = np.genfromtxt(path, delimiter=",", names=True)
    names = list(raw.dtype.names)
    if names[:2] != ["z", "y"] or not all(nm.startswith("x") for nm in names[2:]) or len(names) < 3:
        raise ValidationError(
            f"expected columns z,y,x1..xp; found {names}"
        )
    data = np.column_stack([raw[nm] for nm in names]).astype(float)
    for j in range(2, data.shape[1]):
        sd = data[:, j].std()
        if sd == 0:
            raise ValidationError(f"covariate {names[j]} is constant")
        data[:, j] = (data[:, j] - data[:, j].mean()) / sd
    validate_causal_data(data)
    return CutDataset(data1=data, data2=data, paired=True)


def causal_write_csv(data: CutDataset, path) -> None:
    arr = np.asarray(data.data1, dtype=float)
    p = arr.shape[1] - 2
    header = ["z", "y"] + [f"x{j + 1}" for j in range(p)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in arr:
            fh.write(",".join("%.17g" % v for v in row) + "\n")
