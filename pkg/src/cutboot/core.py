"""Core abstractions for two-module cut models.

A cut model couples two likelihood modules. Module 1 owns the parameter
``theta1`` and sees only its own data; module 2 owns ``theta2``, borrows
``theta1``, and sees the second data set. Inference proceeds in the "cut"
direction: information flows from module 1 into module 2 but never back.

Modules expose vectorized per-observation log-likelihoods and gradients.
Data blocks are opaque arrays whose rows are observations; only the model's
own callables interpret their columns.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

Array = np.ndarray
PriorWeight = Union[float, Array]


class CutbootError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(CutbootError, ValueError):
    """Bad inputs: shapes, domains, incompatible model/data combinations."""


class InfeasibleStartError(CutbootError, ValueError):
    """Optimization started at a point where the objective is -inf."""


class NonConvergenceError(CutbootError):
    """An optimization stage failed to converge where convergence is required."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class SamplingFailureError(CutbootError):
    """Too large a fraction of weighted-optimization draws failed."""

    def __init__(self, message: str, samples=None):
        super().__init__(message)
        self.samples = samples


class NumericalError(CutbootError):
    """Singular or indefinite matrix where a positive-definite one is required."""


def as_float_array(x, name: str, ndim: int | None = None) -> Array:
    """Coerce to a float64 ndarray, validating dimensionality."""
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ParameterSplit:
    """A point in the joint parameter space, split by owning module."""

    theta1: Array
    theta2: Array

    def __post_init__(self):
        t1 = np.atleast_1d(np.asarray(self.theta1, dtype=float))
        t2 = np.atleast_1d(np.asarray(self.theta2, dtype=float))
        if t1.ndim != 1 or t2.ndim != 1:
            raise ValidationError("theta1 and theta2 must be vectors")
        if t1.size < 1 or t2.size < 1:
            raise ValidationError("parameter blocks must be non-empty")
        if not (np.all(np.isfinite(t1)) and np.all(np.isfinite(t2))):
            raise ValidationError("parameter values must be finite")
        object.__setattr__(self, "theta1", t1)
        object.__setattr__(self, "theta2", t2)

    @property
    def d1(self) -> int:
        return self.theta1.size

    @property
    def d2(self) -> int:
        return self.theta2.size

    def stacked(self) -> Array:
        return np.concatenate([self.theta1, self.theta2])


@dataclass(frozen=True)
class ModuleOneSpec:
    """First-module likelihood: data and ``theta1`` only.

    loglik(data1, theta1) -> (n,) per-observation log-likelihood values.
    grad(data1, theta1) -> (n, dim) per-observation gradients in theta1.
    logprior(theta1) -> per-coordinate log-prior terms (shape (dim,)) when
        ``prior_factorizes``; otherwise a scalar joint log-prior.
    logprior_grad(theta1) -> (dim,) gradient of the total log-prior.
    hess, if given, returns the mean per-observation Hessian (dim, dim);
        absent blocks are filled by finite differences where needed.
    """

    dim: int
    loglik: Callable[[Array, Array], Array]
    grad: Callable[[Array, Array], Array]
    logprior: Callable[[Array], Array]
    logprior_grad: Callable[[Array], Array]
    prior_factorizes: bool = True
    hess: Optional[Callable[[Array, Array], Array]] = None


@dataclass(frozen=True)
class ModuleTwoSpec:
    """Second-module likelihood: data, borrowed ``theta1``, own ``theta2``.

    loglik(data2, theta1, theta2) -> (n,); grad(data2, theta1, theta2) ->
    (n, dim) in theta2; grad1 -> (n, dim1) in the borrowed theta1. Optional
    mean-Hessian callables: hess22 (dim, dim), hess12 (dim1, dim) mixed
    block, hess11 (dim1, dim1).
    """

    dim: int
    loglik: Callable[[Array, Array, Array], Array]
    grad: Callable[[Array, Array, Array], Array]
    grad1: Callable[[Array, Array, Array], Array]
    logprior: Callable[[Array], Array]
    logprior_grad: Callable[[Array], Array]
    prior_factorizes: bool = True
    hess22: Optional[Callable[[Array, Array, Array], Array]] = None
    hess12: Optional[Callable[[Array, Array, Array], Array]] = None
    hess11: Optional[Callable[[Array, Array, Array], Array]] = None


@dataclass(frozen=True)
class GaussianCutStructure:
    """Conjugate description of a Gaussian-location cut model.

    Module 1: scalar theta1 with observations data1 ~ N(theta1, model_sd1^2)
    and prior N(prior1_mean, prior1_sd^2). Module 2: responses
    response(data2) ~ N(theta1 * carrier(data2) + design(data2) @ theta2,
    model_sd2^2) with independent N(prior2_mean, prior2_sd^2) priors.
    Enables exact two-stage conditional sampling.
    """

    model_sd1: float
    prior1_mean: float
    prior1_sd: float
    model_sd2: float
    prior2_mean: Array
    prior2_sd: Array
    response: Callable[[Array], Array]
    carrier: Callable[[Array], Array]
    design: Callable[[Array], Array]


@dataclass(frozen=True)
class GroupedBinomialStructure:
    """Marks module 1 as independent per-group binomial counts.

    counts(data1) -> (successes, trials) integer vectors, one entry per
    group; theta1's coordinates are the per-group success probabilities.
    """

    counts: Callable[[Array], tuple]


@dataclass(frozen=True)
class CutDataset:
    """Paired or independent data blocks for the two modules."""

    data1: Array
    data2: Array
    paired: bool = False

    def __post_init__(self):
        d1 = np.asarray(self.data1)
        d2 = np.asarray(self.data2)
        if d1.shape[0] < 1 or d2.shape[0] < 1:
            raise ValidationError("both data blocks must contain at least one observation")
        if self.paired and d1.shape[0] != d2.shape[0]:
            raise ValidationError(
                f"paired data requires equal sizes, got {d1.shape[0]} and {d2.shape[0]}"
            )
        object.__setattr__(self, "data1", d1)
        object.__setattr__(self, "data2", d2)

    @property
    def n1(self) -> int:
        return self.data1.shape[0]

    @property
    def n2(self) -> int:
        return self.data2.shape[0]

    @property
    def alpha(self) -> float:
        """Realized sample-size ratio n1 / n2."""
        return self.n1 / self.n2

    def digest(self) -> str:
        h = hashlib.sha256()
        for block in (self.data1, self.data2):
            h.update(np.ascontiguousarray(block, dtype=float).tobytes())
        h.update(b"paired" if self.paired else b"independent")
        return h.hexdigest()


@dataclass(frozen=True)
class CutModel:
    """A pair of module specs plus optional structure used by fast paths."""

    model_id: str
    module1: ModuleOneSpec
    module2: ModuleTwoSpec
    init1: Optional[Callable[[Array], Array]] = None
    init2: Optional[Callable[[Array, Array], Array]] = None
    gaussian_cut: Optional[GaussianCutStructure] = None
    grouped_binomial: Optional[GroupedBinomialStructure] = None
    module1_posterior: Optional[Callable] = None
    # An OptimizerConfig used whenever the caller does not pass one. Models
    # whose log-likelihood magnitude makes the library-wide gradient
    # tolerance unattainable in float64 ship a looser default here.
    default_optimizer: Optional[object] = None

    @property
    def d1(self) -> int:
        return self.module1.dim

    @property
    def d2(self) -> int:
        return self.module2.dim


def _validate_weights(weights: Array, n: int) -> Array:
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValidationError(f"weights must have shape ({n},), got {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights must be finite and non-negative")
    return w


def _validate_prior_weight(w0: PriorWeight, dim: int, factorizes: bool, name: str) -> Array:
    arr = np.asarray(w0, dtype=float)
    if arr.ndim == 0:
        arr = np.full(dim, float(arr))
    if arr.shape != (dim,):
        raise ValidationError(f"{name} must be a scalar or a length-{dim} vector")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite and non-negative")
    if not factorizes and arr.size > 1 and not np.all(arr == arr[0]):
        raise ValidationError(
            f"vector {name} requires a coordinate-factorizing prior; use a scalar"
        )
    return arr


def _weighted_sum(weights: Array, terms: Array) -> float:
    """Sum of weights*terms with zero-weight terms dropped even at -inf."""
    contrib = np.where(weights > 0, weights * terms, 0.0)
    if np.any(np.isnan(contrib)):
        return -np.inf
    return float(np.sum(contrib))


def _prior_value_and_grad(logprior, logprior_grad, factorizes: bool,
                          w0: Array, theta: Array) -> tuple:
    """Value and gradient of the prior-weight penalty w0 . log pi(theta)."""
    if np.all(w0 == 0):
        return 0.0, np.zeros_like(theta)
    terms = np.asarray(logprior(theta), dtype=float)
    if factorizes:
        if terms.shape != theta.shape:
            raise ValidationError(
                "factorizing prior must return one log-density term per coordinate"
            )
        value = _weighted_sum(w0, terms)
        grad = w0 * np.asarray(logprior_grad(theta), dtype=float)
    else:
        value = float(w0[0]) * float(terms)
        grad = float(w0[0]) * np.asarray(logprior_grad(theta), dtype=float)
        if not np.isfinite(value):
            value = -np.inf
    return value, grad


def weighted_objective_m1(module: ModuleOneSpec, data1: Array, weights,
                          w0: PriorWeight, theta1) -> float:
    """Weighted module-1 objective: sum_j w_j l1(x_j; theta1) + w0 . log pi1."""
    theta1 = as_float_array(theta1, "theta1", ndim=1)
    if theta1.size != module.dim:
        raise ValidationError(f"theta1 must have length {module.dim}")
    if np.any(np.isnan(theta1)):
        raise ValidationError("theta1 contains NaN")
    n = np.asarray(data1).shape[0]
    w = _validate_weights(weights, n)
    w0v = _validate_prior_weight(w0, module.dim, module.prior_factorizes, "w0")
    ll = np.asarray(module.loglik(data1, theta1), dtype=float)
    value = _weighted_sum(w, ll)
    pv, _ = _prior_value_and_grad(module.logprior, module.logprior_grad,
                                  module.prior_factorizes, w0v, theta1)
    total = value + pv
    return total if np.isfinite(total) else -np.inf


def weighted_objective_m2(module: ModuleTwoSpec, data2: Array, weights,
                          v0: PriorWeight, theta1, theta2) -> float:
    """Weighted module-2 objective at fixed theta1: sum_j v_j l2 + v0 . log pi2."""
    theta1 = as_float_array(theta1, "theta1", ndim=1)
    theta2 = as_float_array(theta2, "theta2", ndim=1)
    if theta2.size != module.dim:
        raise ValidationError(f"theta2 must have length {module.dim}")
    if np.any(np.isnan(theta1)) or np.any(np.isnan(theta2)):
        raise ValidationError("parameters contain NaN")
    n = np.asarray(data2).shape[0]
    v = _validate_weights(weights, n)
    v0v = _validate_prior_weight(v0, module.dim, module.prior_factorizes, "v0")
    ll = np.asarray(module.loglik(data2, theta1, theta2), dtype=float)
    value = _weighted_sum(v, ll)
    pv, _ = _prior_value_and_grad(module.logprior, module.logprior_grad,
                                  module.prior_factorizes, v0v, theta2)
    total = value + pv
    return total if np.isfinite(total) else -np.inf


def m1_value_and_grad(module: ModuleOneSpec, data1: Array, weights,
                      w0: PriorWeight):
    """Fused objective/gradient closure over theta1 for the optimizer."""
    n = np.asarray(data1).shape[0]
    w = _validate_weights(weights, n)
    w0v = _validate_prior_weight(w0, module.dim, module.prior_factorizes, "w0")

    def fg(theta1: Array):
        ll = np.asarray(module.loglik(data1, theta1), dtype=float)
        value = _weighted_sum(w, ll)
        pv, pg = _prior_value_and_grad(module.logprior, module.logprior_grad,
                                       module.prior_factorizes, w0v, theta1)
        value = value + pv
        if not np.isfinite(value):
            return -np.inf, np.zeros(module.dim)
        g = np.asarray(module.grad(data1, theta1), dtype=float)
        return value, w @ g + pg

    return fg


def m2_value_and_grad(module: ModuleTwoSpec, data2: Array, weights,
                      v0: PriorWeight, theta1: Array):
    """Fused objective/gradient closure over theta2 at fixed theta1."""
    n = np.asarray(data2).shape[0]
    v = _validate_weights(weights, n)
    v0v = _validate_prior_weight(v0, module.dim, module.prior_factorizes, "v0")
    theta1 = as_float_array(theta1, "theta1", ndim=1)

    def fg(theta2: Array):
        ll = np.asarray(module.loglik(data2, theta1, theta2), dtype=float)
        value = _weighted_sum(v, ll)
        pv, pg = _prior_value_and_grad(module.logprior, module.logprior_grad,
                                       module.prior_factorizes, v0v, theta2)
        value = value + pv
        if not np.isfinite(value):
            return -np.inf, np.zeros(module.dim)
        g = np.asarray(module.grad(data2, theta1, theta2), dtype=float)
        return value, v @ g + pg

    return fg


@dataclass
class GradientCheckReport:
    """Result of comparing analytic gradients to central finite differences."""

    max_rel_error: float
    block_errors: dict
    tol: float
    passed: bool


def _total_loglik_fns(module, data, point):
    """Build (f, analytic-gradient blocks) for a module at a point."""
    if isinstance(module, ModuleOneSpec):
        if isinstance(point, ParameterSplit):
            point = point.theta1
        theta1 = as_float_array(point, "theta1", ndim=1)

        def f(t1):
            return float(np.sum(module.loglik(data, t1)))

        blocks = {"theta1": (theta1, lambda t1: np.sum(module.grad(data, t1), axis=0))}
        return f, blocks, (theta1,)
    if isinstance(module, ModuleTwoSpec):
        if isinstance(point, ParameterSplit):
            theta1, theta2 = point.theta1, point.theta2
        else:
            theta1 = as_float_array(point[0], "theta1", ndim=1)
            theta2 = as_float_array(point[1], "theta2", ndim=1)

        def f2(t1, t2):
            return float(np.sum(module.loglik(data, t1, t2)))

        blocks = {
            "theta2": (theta2, lambda t2: np.sum(module.grad(data, theta1, t2), axis=0)),
            "theta1": (theta1, lambda t1: np.sum(module.grad1(data, t1, theta2), axis=0)),
        }

        def f_theta2(t2):
            return f2(theta1, t2)

        def f_theta1(t1):
            return f2(t1, theta2)

        return {"theta1": f_theta1, "theta2": f_theta2}, blocks, (theta1, theta2)
    raise ValidationError("module must be a ModuleOneSpec or ModuleTwoSpec")


def check_gradients(module, data, point, tol: float = 1e-5,
                    step: float = 1e-6) -> GradientCheckReport:
    """Compare a module's analytic gradients to central finite differences.

    ``point`` is a theta1 vector for first modules, or a (theta1, theta2)
    pair / ParameterSplit for second modules. Raises if any probe point
    leaves the likelihood's support (the check would be meaningless there).
    """
    fs, blocks, _ = _total_loglik_fns(module, data, point)
    errors = {}
    for name, (theta, grad_fn) in blocks.items():
        f = fs if callable(fs) else fs[name]
        analytic = np.asarray(grad_fn(theta), dtype=float)
        fd = np.empty_like(theta)
        for i in range(theta.size):
            h = step * max(1.0, abs(theta[i]))
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            f_up, f_dn = f(up), f(dn)
            if not (np.isfinite(f_up) and np.isfinite(f_dn)):
                raise ValidationError(
                    f"gradient check at a support boundary: {name}[{i}] +/- {h:g} "
                    "leaves the likelihood's domain"
                )
            fd[i] = (f_up - f_dn) / (2 * h)
        denom = max(1.0, float(np.max(np.abs(fd))))
        errors[name] = float(np.max(np.abs(analytic - fd)) / denom)
    worst = max(errors.values())
    return GradientCheckReport(max_rel_error=worst, block_errors=errors,
                               tol=tol, passed=worst <= tol)
