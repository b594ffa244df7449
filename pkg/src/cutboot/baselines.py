"""Reference samplers the weighted-optimization method is compared against.

Two cut-posterior samplers (an exact conjugate path for Gaussian-location
models and a generic nested Metropolis scheme) plus two "no cut" baselines
(the joint conjugate posterior and a joint weighted-optimization sampler).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    Array,
    CutDataset,
    CutModel,
    GaussianCutStructure,
    ValidationError,
    m1_value_and_grad,
    _prior_value_and_grad,
    _validate_prior_weight,
    _weighted_sum,
)
from .optimize import OptimizerConfig, fit_mle, maximize, resolve_optimizer
from .asymptotics import estimate_info, sigma_cut_laplace
from .core import ParameterSplit
from .sampler import SampleSet, draw_stream, exp_weights


def _stream(seed: int, key: tuple) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _data_blocks(data):
    """Accept a CutDataset or a raw (data1, data2) pair of arrays."""
    if isinstance(data, CutDataset):
        return data.data1, data.data2
    if isinstance(data, (tuple, list)) and len(data) == 2:
        return np.asarray(data[0], dtype=float), np.asarray(data[1], dtype=float)
    raise ValidationError("data must be a CutDataset or a (data1, data2) pair")


def _apply_prior_overrides(struct: GaussianCutStructure, prior_params) -> GaussianCutStructure:
    if not prior_params:
        return struct
    allowed = {"prior1_mean", "prior1_sd", "prior2_mean", "prior2_sd"}
    unknown = set(prior_params) - allowed
    if unknown:
        raise ValidationError(f"unknown prior parameters: {sorted(unknown)}")
    fields = {k: getattr(struct, k) for k in allowed}
    fields.update(prior_params)
    return GaussianCutStructure(
        model_sd1=struct.model_sd1,
        model_sd2=struct.model_sd2,
        response=struct.response,
        carrier=struct.carrier,
        design=struct.design,
        prior1_mean=float(fields["prior1_mean"]),
        prior1_sd=float(fields["prior1_sd"]),
        prior2_mean=np.asarray(fields["prior2_mean"], dtype=float),
        prior2_sd=np.asarray(fields["prior2_sd"], dtype=float),
    )


def cut_exact_gaussian(model: CutModel, data, size: int, seed: int = 0,
                       prior_params: Optional[dict] = None) -> SampleSet:
    """Exact two-stage conjugate sampler for Gaussian-location cut models.

    Draws theta1 from its closed-form module-1 posterior, then theta2 from
    the module-2 conditional at each theta1. Accepts raw (data1, data2)
    arrays, either possibly empty, in which case the corresponding stage
    reduces to its prior. ``prior_params`` may override the model's prior
    means/sds.
    """
    if model.gaussian_cut is None:
        raise ValidationError(
            f"exact sampler unavailable for this model "
            f"({model.model_id!r} has no conjugate cut structure)")
    if size < 1:
        raise ValidationError("size must be >= 1")
    struct = _apply_prior_overrides(model.gaussian_cut, prior_params)
    data1, data2 = _data_blocks(data)
    z = np.asarray(data1, dtype=float).reshape(-1)
    rng = _stream(seed, (0,))

    tau1 = struct.prior1_sd ** 2
    prec1 = z.size / struct.model_sd1 ** 2 + 1.0 / tau1
    mean1 = (z.sum() / struct.model_sd1 ** 2 + struct.prior1_mean / tau1) / prec1
    theta1 = mean1 + rng.standard_normal(size) / np.sqrt(prec1)

    d2 = struct.prior2_mean.size
    tau2 = struct.prior2_sd ** 2
    if np.asarray(data2).shape[0] > 0:
        y = struct.response(data2)
        c = struct.carrier(data2)
        H = np.atleast_2d(struct.design(data2))
        if H.shape[0] != y.size:
            H = H.T
        s2sq = struct.model_sd2 ** 2
        prec2 = H.T @ H / s2sq + np.diag(1.0 / tau2)
        base = H.T @ y / s2sq + struct.prior2_mean / tau2
        slope = H.T @ c / s2sq
    else:
        prec2 = np.diag(1.0 / tau2)
        base = struct.prior2_mean / tau2
        slope = np.zeros(d2)
    cov2 = np.linalg.inv(prec2)
    means = (base[None, :] - np.outer(theta1, slope)) @ cov2.T
    chol = np.linalg.cholesky(cov2)
    theta2 = means + rng.standard_normal((size, d2)) @ chol.T
    return SampleSet(theta1=theta1[:, None], theta2=theta2, scenario="cut-bayes",
                     seed=seed, w0=1.0, v0=1.0, converged=np.ones(size, dtype=bool),
                     model_id=model.model_id,
                     data_digest=data.digest() if isinstance(data, CutDataset) else "")


@dataclass
class NestedMcmcConfig:
    """Random-walk settings for the nested cut sampler.

    proposal_scales, when given, is a (scale1, scale2) pair of per-coordinate
    step sizes; otherwise both derive from the plug-in Laplace covariance.
    ``outer_exact`` replaces the outer chain with the model's exact module-1
    posterior sampler when one is available.
    """

    outer_draws: int = 2000
    inner_chain_length: int = 60
    inner_burnin: int = 30
    proposal_scales: Optional[tuple] = None
    thinning: int = 5
    outer_burnin: int = 500
    outer_exact: bool = False

    def __post_init__(self):
        if self.outer_draws < 1:
            raise ValidationError("outer_draws must be >= 1")
        if self.inner_burnin < 0 or self.inner_burnin >= self.inner_chain_length:
            raise ValidationError("need 0 <= inner_burnin < inner_chain_length")
        if self.thinning < 1 or self.outer_burnin < 0:
            raise ValidationError("thinning must be >= 1 and outer_burnin >= 0")
        if self.proposal_scales is not None:
            s1, s2 = self.proposal_scales
            if np.any(np.asarray(s1) <= 0) or np.any(np.asarray(s2) <= 0):
                raise ValidationError("proposal scales must be positive")


def _log_target(loglik_sum, logprior, logprior_grad, factorizes):
    def lp(theta):
        ll = loglik_sum(theta)
        if not np.isfinite(ll):
            return -np.inf
        terms = np.asarray(logprior(theta), dtype=float)
        prior = float(np.sum(terms)) if factorizes else float(terms)
        total = ll + prior
        return total if np.isfinite(total) else -np.inf
    return lp


def _rw_chain(lp, start: Array, scale: Array, steps: int,
              rng: np.random.Generator):
    """Random-walk Metropolis; returns (path, acceptance_rate)."""
    x = start.copy()
    fx = lp(x)
    path = np.empty((steps, x.size))
    accepted = 0
    for t in range(steps):
        prop = x + scale * rng.standard_normal(x.size)
        fp = lp(prop)
        if np.log(rng.uniform()) < fp - fx:
            x, fx = prop, fp
            accepted += 1
        path[t] = x
    return path, accepted / steps


def cut_nested_metropolis(model: CutModel, data,
                          config: Optional[NestedMcmcConfig] = None,
                          seed: int = 0) -> SampleSet:
    """Nested random-walk sampler for the cut posterior.

    An outer chain targets the module-1 posterior alone (never seeing
    module-2 data); each retained outer state gets a fresh inner chain over
    theta2 whose final post-burn-in state is kept. Accepts raw
    (data1, data2) pairs with empty data2, in which case the inner chains
    target the module-2 prior. Acceptance-rate diagnostics are attached to
    the returned draws; rates far outside [0.05, 0.8] trigger a warning.
    """
    config = config or NestedMcmcConfig()
    data1, data2 = _data_blocks(data)
    n1 = np.asarray(data1).shape[0]
    n2 = np.asarray(data2).shape[0]
    d1, d2 = model.d1, model.d2
    m1, m2 = model.module1, model.module2

    opt = resolve_optimizer(None, model)
    if isinstance(data, CutDataset) and n2 > 0:
        mle = fit_mle(model, data, opt)
        anchor1, anchor2 = mle.theta1_hat, mle.theta2_hat
    elif n1 > 0:
        fg1 = m1_value_and_grad(m1, data1, np.ones(n1), 0.0)
        anchor1, _ = maximize(fg1, np.zeros(d1) if model.init1 is None
                              else np.asarray(model.init1(data1), dtype=float), opt)
        anchor2 = np.zeros(d2)
    else:
        # Both stages muted reduce to the priors; start the chains at zero.
        anchor1, anchor2 = np.zeros(d1), np.zeros(d2)

    if config.proposal_scales is not None:
        scale1 = np.broadcast_to(np.asarray(config.proposal_scales[0], dtype=float), (d1,)).copy()
        scale2 = np.broadcast_to(np.asarray(config.proposal_scales[1], dtype=float), (d2,)).copy()
    elif isinstance(data, CutDataset) and n2 > 0:
        info = estimate_info(model, data, ParameterSplit(anchor1, anchor2))
        sd = np.sqrt(np.diag(sigma_cut_laplace(info)) / data.n2)
        scale1 = 2.4 * sd[:d1] / np.sqrt(d1)
        scale2 = 2.4 * sd[d1:] / np.sqrt(d2)
    else:
        scale1 = np.full(d1, 2.4 / np.sqrt(d1))
        scale2 = np.full(d2, 2.4 / np.sqrt(d2))

    diagnostics = {"warnings": []}
    if config.inner_burnin == 0:
        diagnostics["warnings"].append("inner_burnin is 0; inner chains keep their final state anyway")

    rng_outer = _stream(seed, (0,))
    if config.outer_exact:
        if model.module1_posterior is None:
            raise ValidationError(
                f"model {model.model_id!r} has no exact module-1 posterior sampler"
            )
        theta1 = np.atleast_2d(model.module1_posterior(data1, config.outer_draws, rng_outer))
        if theta1.shape != (config.outer_draws, d1):
            theta1 = theta1.reshape(config.outer_draws, d1)
        diagnostics["outer_acceptance"] = None
    else:
        lp1 = _log_target(lambda t: float(np.sum(m1.loglik(data1, t))),
                          m1.logprior, m1.logprior_grad, m1.prior_factorizes)
        steps = config.outer_burnin + config.outer_draws * config.thinning
        path, acc = _rw_chain(lp1, anchor1, scale1, steps, rng_outer)
        keep = config.outer_burnin + config.thinning * np.arange(1, config.outer_draws + 1) - 1
        theta1 = path[keep]
        diagnostics["outer_acceptance"] = acc

    theta2 = np.empty((config.outer_draws, d2))
    inner_acc = np.empty(config.outer_draws)
    for k in range(config.outer_draws):
        t1 = theta1[k]
        if n2 > 0:
            def ll2_sum(t2, _t1=t1):
                return float(np.sum(m2.loglik(data2, _t1, t2)))
        else:
            def ll2_sum(t2):
                return 0.0
        lp2 = _log_target(ll2_sum, m2.logprior, m2.logprior_grad, m2.prior_factorizes)
        rng_inner = _stream(seed, (1, k))
        path, acc = _rw_chain(lp2, anchor2, scale2, config.inner_chain_length, rng_inner)
        theta2[k] = path[-1]
        inner_acc[k] = acc

    frac_outside = float(np.mean((inner_acc < 0.05) | (inner_acc > 0.8)))
    diagnostics["inner_acceptance_mean"] = float(inner_acc.mean())
    diagnostics["inner_acceptance_frac_outside"] = frac_outside
    if frac_outside > 0.10:
        msg = (f"{frac_outside:.0%} of inner chains have acceptance rates outside "
               "[0.05, 0.8]; consider adjusting proposal_scales")
        diagnostics["warnings"].append(msg)
        warnings.warn(msg)

    return SampleSet(theta1=theta1, theta2=theta2, scenario="cut-bayes",
                     seed=seed, w0=1.0, v0=1.0,
                     converged=np.ones(config.outer_draws, dtype=bool),
                     model_id=model.model_id,
                     data_digest=data.digest() if isinstance(data, CutDataset) else "",
                     diagnostics=diagnostics)


def full_gaussian_bayes(model: CutModel, data, size: int, seed: int = 0) -> SampleSet:
    """Joint conjugate posterior with no cut: both modules inform theta1.

    Available for models carrying a Gaussian-location structure. The joint
    precision couples theta1 to theta2 through the module-2 design.
    """
    if model.gaussian_cut is None:
        raise ValidationError(f"joint conjugate posterior unavailable for {model.model_id!r}")
    if size < 1:
        raise ValidationError("size must be >= 1")
    struct = model.gaussian_cut
    data1, data2 = _data_blocks(data)
    z = np.asarray(data1, dtype=float).reshape(-1)
    y = struct.response(data2)
    c = struct.carrier(data2)
    H = np.atleast_2d(struct.design(data2))
    if H.shape[0] != y.size:
        H = H.T
    d2 = struct.prior2_mean.size
    s1sq, s2sq = struct.model_sd1 ** 2, struct.model_sd2 ** 2
    tau1, tau2 = struct.prior1_sd ** 2, struct.prior2_sd ** 2

    prec = np.zeros((1 + d2, 1 + d2))
    prec[0, 0] = z.size / s1sq + float(c @ c) / s2sq + 1.0 / tau1
    prec[0, 1:] = c @ H / s2sq
    prec[1:, 0] = prec[0, 1:]
    prec[1:, 1:] = H.T @ H / s2sq + np.diag(1.0 / tau2)
    b = np.concatenate([[z.sum() / s1sq + float(c @ y) / s2sq + struct.prior1_mean / tau1],
                        H.T @ y / s2sq + struct.prior2_mean / tau2])
    cov = np.linalg.inv(prec)
    mean = cov @ b
    rng = _stream(seed, (0,))
    draws = mean + rng.standard_normal((size, 1 + d2)) @ np.linalg.cholesky(cov).T
    return SampleSet(theta1=draws[:, :1], theta2=draws[:, 1:], scenario="full-bayes",
                     seed=seed, w0=1.0, v0=1.0, converged=np.ones(size, dtype=bool),
                     model_id=model.model_id,
                     data_digest=data.digest() if isinstance(data, CutDataset) else "")


def _joint_value_and_grad(model: CutModel, data: CutDataset, w: Array, v: Array,
                          w0v: Array, v0v: Array):
    m1, m2 = model.module1, model.module2
    d1 = model.d1

    def fg(x: Array):
        t1, t2 = x[:d1], x[d1:]
        ll1 = np.asarray(m1.loglik(data.data1, t1), dtype=float)
        ll2 = np.asarray(m2.loglik(data.data2, t1, t2), dtype=float)
        value = _weighted_sum(w, ll1) + _weighted_sum(v, ll2)
        p1, p1g = _prior_value_and_grad(m1.logprior, m1.logprior_grad,
                                        m1.prior_factorizes, w0v, t1)
        p2, p2g = _prior_value_and_grad(m2.logprior, m2.logprior_grad,
                                        m2.prior_factorizes, v0v, t2)
        value = value + p1 + p2
        if not np.isfinite(value):
            return -np.inf, np.zeros(x.size)
        g_t1 = w @ np.asarray(m1.grad(data.data1, t1), dtype=float) \
            + v @ np.asarray(m2.grad1(data.data2, t1, t2), dtype=float) + p1g
        g_t2 = v @ np.asarray(m2.grad(data.data2, t1, t2), dtype=float) + p2g
        return value, np.concatenate([g_t1, g_t2])

    return fg


def full_posterior_bootstrap(model: CutModel, data: CutDataset, n_draws: int,
                             w0=0.0, v0=0.0, seed: int = 0,
                             config: Optional[OptimizerConfig] = None,
                             unit_weights: bool = False) -> SampleSet:
    """Joint weighted-optimization sampler with no cut.

    Each draw maximizes the weighted sum of BOTH modules' log-likelihoods
    over (theta1, theta2) jointly, so module-2 misspecification feeds back
    into theta1. Paired data share one weight vector across modules;
    independent data get independent vectors.
    """
    if n_draws < 1:
        raise ValidationError("n_draws must be >= 1")
    config = resolve_optimizer(config, model)
    w0v = _validate_prior_weight(w0, model.d1, model.module1.prior_factorizes, "w0")
    v0v = _validate_prior_weight(v0, model.d2, model.module2.prior_factorizes, "v0")
    mle = fit_mle(model, data, config)
    anchor = np.concatenate([mle.theta1_hat, mle.theta2_hat])
    theta = np.empty((n_draws, anchor.size))
    flags = np.empty(n_draws, dtype=bool)
    for k in range(n_draws):
        stream = draw_stream(seed, k)
        if unit_weights:
            w, v = np.ones(data.n1), np.ones(data.n2)
        elif data.paired:
            w = exp_weights(data.n1, stream)
            v = w
        else:
            w = exp_weights(data.n1, stream)
            v = exp_weights(data.n2, stream)
        fg = _joint_value_and_grad(model, data, w, v, w0v, v0v)
        theta[k], diag = maximize(fg, anchor, config)
        flags[k] = diag.converged
    return SampleSet(theta1=theta[:, :model.d1], theta2=theta[:, model.d1:],
                     scenario="full-pb", seed=seed, w0=w0, v0=v0, converged=flags,
                     model_id=model.model_id, data_digest=data.digest())
