"""Deterministic quasi-Newton maximization for weighted objectives.

The sampler solves many small smooth maximization problems whose objectives
can return -inf outside the support. This module provides a BFGS ascent with
Armijo backtracking that treats -inf as "step too long", plus the two-stage
point-estimate driver used to anchor draws and plug-in matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    Array,
    CutDataset,
    CutModel,
    InfeasibleStartError,
    NonConvergenceError,
    ValidationError,
    as_float_array,
    m1_value_and_grad,
    m2_value_and_grad,
)

_ARMIJO = 1e-4
_MAX_BACKTRACKS = 60
_RESTART_LADDER = (0.0, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0, 4.0, -4.0, 8.0, -8.0)


@dataclass
class OptimizerConfig:
    """Tuning knobs for the quasi-Newton ascent.

    initial_point_policy: "zeros", "data_driven" (use the model's init
    callables), or "user_supplied" (use user_init1/user_init2).
    restarts: number of deterministic starting points tried; the best
    final objective wins, ties resolved by ladder order.
    """

    max_iterations: int = 200
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-12
    initial_point_policy: str = "data_driven"
    restarts: int = 1
    user_init1: Optional[Array] = None
    user_init2: Optional[Array] = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.gradient_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValidationError("tolerances must be positive")
        if self.initial_point_policy not in ("zeros", "data_driven", "user_supplied"):
            raise ValidationError(f"unknown initial_point_policy {self.initial_point_policy!r}")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")


@dataclass
class OptimizationDiagnostics:
    value: float
    gradient_sup_norm: float
    iterations: int
    converged: bool
    n_evaluations: int
    message: str = ""


def _bfgs_ascent(fun_and_grad: Callable, init: Array, config: OptimizerConfig):
    x = as_float_array(init, "init", ndim=1).copy()
    f, g = fun_and_grad(x)
    n_eval = 1
    if not np.isfinite(f):
        raise InfeasibleStartError(
            "objective is -inf at the starting point; supply a feasible start"
        )
    d = x.size
    H = np.eye(d)
    iterations = 0
    message = "max iterations reached"
    for iterations in range(1, config.max_iterations + 1):
        sup = float(np.max(np.abs(g)))
        if sup <= config.gradient_tolerance:
            message = "gradient tolerance met"
            iterations -= 1
            break
        direction = H @ g
        slope = float(direction @ g)
        if slope <= 0:
            H = np.eye(d)
            direction = g.copy()
            slope = float(g @ g)
            if slope <= 0:
                message = "zero gradient direction"
                break
        t = 1.0
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            x_new = x + t * direction
            f_new, g_new = fun_and_grad(x_new)
            n_eval += 1
            if np.isfinite(f_new) and f_new >= f + _ARMIJO * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            message = "line search failed"
            break
        s = x_new - x
        y = g - g_new  # curvature of the negated (minimized) objective
        x, f, g = x_new, f_new, g_new
        if float(np.max(np.abs(s))) <= config.step_tolerance:
            message = "step tolerance met"
            break
        sy = float(y @ s)
        if sy > 1e-12 * float(np.linalg.norm(y)) * float(np.linalg.norm(s)) and sy > 0:
            rho = 1.0 / sy
            Hy = H @ y
            yHy = float(y @ Hy)
            H = (H - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                 + rho * (1.0 + rho * yHy) * np.outer(s, s))
    sup = float(np.max(np.abs(g)))
    converged = sup <= config.gradient_tolerance
    if converged:
        message = "gradient tolerance met"
    diag = OptimizationDiagnostics(value=f, gradient_sup_norm=sup,
                                   iterations=iterations, converged=converged,
                                   n_evaluations=n_eval, message=message)
    return x, diag


def maximize(fun_and_grad: Callable, init, config: OptimizerConfig | None = None):
    """Maximize a smooth objective, returning (argmax, diagnostics).

    ``fun_and_grad(theta) -> (value, gradient)``; a value of -inf marks an
    infeasible point and makes the line search back off. Non-convergence is
    flagged in the diagnostics, not raised. With ``restarts > 1`` a fixed
    ladder of offsets from ``init`` is tried and the best objective wins.
    """
    config = config or OptimizerConfig()
    init = as_float_array(init, "init", ndim=1)
    if config.restarts == 1:
        return _bfgs_ascent(fun_and_grad, init, config)
    candidates = []
    for idx in range(config.restarts):
        offset = _RESTART_LADDER[idx % len(_RESTART_LADDER)]
        start = init + offset
        try:
            candidates.append(_bfgs_ascent(fun_and_grad, start, config))
        except InfeasibleStartError:
            if idx == 0:
                raise
    values = [diag.value for _, diag in candidates]
    best = int(np.argmax(values))
    return candidates[best]


@dataclass
class MleEstimates:
    """Two-stage point estimates: theta1 from module 1, theta2 from module 2
    evaluated at theta1_hat. ``converged[i]`` implies the stage-i gradient
    sup-norm is within tolerance."""

    theta1_hat: Array
    theta2_hat: Array
    converged: tuple
    gradient_sup_norms: tuple
    values: tuple


def resolve_optimizer(config: OptimizerConfig | None,
                      model: CutModel) -> OptimizerConfig:
    """Pick the optimizer settings for a model: an explicit config wins,
    then the model's own default, then the library default."""
    if config is not None:
        return config
    if model.default_optimizer is not None:
        return model.default_optimizer
    return OptimizerConfig()


def _initial_points(model: CutModel, data: CutDataset, config: OptimizerConfig):
    policy = config.initial_point_policy
    if policy == "zeros":
        return np.zeros(model.d1), lambda t1: np.zeros(model.d2)
    if policy == "user_supplied":
        if config.user_init1 is None or config.user_init2 is None:
            raise ValidationError("user_supplied policy requires user_init1 and user_init2")
        u1 = as_float_array(config.user_init1, "user_init1", ndim=1)
        u2 = as_float_array(config.user_init2, "user_init2", ndim=1)
        return u1, lambda t1: u2
    if model.init1 is not None:
        init1 = as_float_array(model.init1(data.data1), "init1", ndim=1)
    else:
        init1 = np.zeros(model.d1)
    if model.init2 is not None:
        return init1, lambda t1: as_float_array(model.init2(data.data2, t1), "init2", ndim=1)
    return init1, lambda t1: np.zeros(model.d2)


def fit_mle(model: CutModel, data: CutDataset,
            config: OptimizerConfig | None = None) -> MleEstimates:
    """Two-stage maximum likelihood: unweighted, no prior penalty.

    Stage 1 maximizes the module-1 log-likelihood; stage 2 maximizes the
    module-2 log-likelihood with theta1 fixed at the stage-1 estimate.
    Stage-1 non-convergence aborts stage 2.
    """
    config = resolve_optimizer(config, model)
    init1, init2_fn = _initial_points(model, data, config)
    w1 = np.ones(data.n1)
    fg1 = m1_value_and_grad(model.module1, data.data1, w1, 0.0)
    theta1_hat, diag1 = maximize(fg1, init1, config)
    if not diag1.converged:
        raise NonConvergenceError(
            f"stage-1 estimation did not converge: {diag1.message} "
            f"(gradient sup-norm {diag1.gradient_sup_norm:.3e} after "
            f"{diag1.iterations} iterations)",
            diagnostics=diag1,
        )
    w2 = np.ones(data.n2)
    fg2 = m2_value_and_grad(model.module2, data.data2, w2, 0.0, theta1_hat)
    theta2_hat, diag2 = maximize(fg2, init2_fn(theta1_hat), config)
    return MleEstimates(
        theta1_hat=theta1_hat,
        theta2_hat=theta2_hat,
        converged=(diag1.converged, diag2.converged),
        gradient_sup_norms=(diag1.gradient_sup_norm, diag2.gradient_sup_norm),
        values=(diag1.value, diag2.value),
    )
