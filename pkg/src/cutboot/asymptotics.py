"""Plug-in information matrices and large-sample covariance assembly.

All covariances describe the joint limit of sqrt(n2) * (theta - theta_hat):
the module-1 block is inflated by 1/alpha where alpha = n1/n2. Three
assemblies are provided: the weighted-optimization sampler's limit for
independent data, its limit for paired data (which picks up cross-module
score covariance), and the Laplace shape of the cut posterior itself.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    Array,
    CutDataset,
    CutModel,
    NumericalError,
    ParameterSplit,
    ValidationError,
)

_COND_LIMIT = 1e12


def _sym(a: Array) -> Array:
    return 0.5 * (a + a.T)


def _as_matrix(a, name: str) -> Array:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"{name} contains non-finite entries")
    return m


def _inverse(a: Array, name: str) -> Array:
    if not np.all(np.isfinite(a)) or np.linalg.cond(a) > _COND_LIMIT:
        raise NumericalError(f"{name} is singular or ill-conditioned")
    return np.linalg.solve(a, np.eye(a.shape[0]))


def check_psd(a: Array, name: str = "matrix", tol: float = 1e-8) -> None:
    """Raise unless the symmetric matrix is PSD up to a relative tolerance."""
    eigs = np.linalg.eigvalsh(_sym(a))
    scale = max(1.0, float(eigs[-1]))
    if eigs[0] < -tol * scale:
        raise NumericalError(f"{name} has negative eigenvalue {eigs[0]:.3e}")


def _psd_sqrt(a: Array, name: str) -> Array:
    """Symmetric PSD square root; eigenvalues in [-1e-8, 0) clamp to zero."""
    vals, vecs = np.linalg.eigh(_sym(a))
    if vals[0] < -1e-8:
        raise NumericalError(f"{name} has negative eigenvalue {vals[0]:.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class InfoMatrices:
    """Empirical (or population) information pieces at an anchor point.

    I1, J1: module-1 score covariance and negative mean Hessian (d1 x d1).
    I2, J2: module-2 analogues in theta2 (d2 x d2).
    RJ: negative mean mixed Hessian of module 2, (d1 x d2).
    RI: cross-module score covariance (d1 x d2); only defined for paired
        data, None otherwise.
    alpha: realized sample-size ratio n1/n2.
    """

    I1: Array
    J1: Array
    I2: Array
    J2: Array
    RJ: Array
    RI: Optional[Array]
    alpha: float
    evaluated_at: ParameterSplit

    def __post_init__(self):
        d1 = self.evaluated_at.d1
        d2 = self.evaluated_at.d2
        for name in ("I1", "J1", "I2", "J2", "RJ"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        if self.RI is not None:
            object.__setattr__(self, "RI", _as_matrix(self.RI, "RI"))
            if self.RI.shape != (d1, d2):
                raise ValidationError(f"RI must be ({d1}, {d2})")
        for name, shape in (("I1", (d1, d1)), ("J1", (d1, d1)),
                            ("I2", (d2, d2)), ("J2", (d2, d2)),
                            ("RJ", (d1, d2))):
            if getattr(self, name).shape != shape:
                raise ValidationError(f"{name} must have shape {shape}")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValidationError("alpha must be positive")


def _fd_jacobian(fn, theta: Array, rel_step: float = 1e-5) -> Array:
    """Central-difference Jacobian of fn: R^p -> R^q, returned as (q, p)."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for i in range(theta.size):
        h = rel_step * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        cols.append((np.asarray(fn(up)) - np.asarray(fn(dn))) / (2 * h))
    return np.column_stack(cols)


def estimate_info(model: CutModel, data: CutDataset,
                  at: ParameterSplit) -> InfoMatrices:
    """Empirical information matrices at the supplied anchor point.

    Score covariances average per-observation gradient outer products;
    Hessian blocks use the model's analytic callables when available and
    central finite differences of the mean gradients otherwise. The
    cross-module score covariance RI requires paired data and is None
    otherwise.
    """
    t1, t2 = at.theta1, at.theta2
    m1, m2 = model.module1, model.module2
    if at.d1 != m1.dim or at.d2 != m2.dim:
        raise ValidationError("anchor point dimensions do not match the model")
    g1 = np.asarray(m1.grad(data.data1, t1), dtype=float)
    g2 = np.asarray(m2.grad(data.data2, t1, t2), dtype=float)
    if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(g2))):
        raise NumericalError("non-finite scores at the anchor point")
    I1 = _sym(g1.T @ g1 / data.n1)
    I2 = _sym(g2.T @ g2 / data.n2)
    if m1.hess is not None:
        J1 = -np.atleast_2d(np.asarray(m1.hess(data.data1, t1), dtype=float))
    else:
        J1 = -_fd_jacobian(lambda v: m1.grad(data.data1, v).mean(axis=0), t1)
    if m2.hess22 is not None:
        J2 = -np.atleast_2d(np.asarray(m2.hess22(data.data2, t1, t2), dtype=float))
    else:
        J2 = -_fd_jacobian(lambda v: m2.grad(data.data2, t1, v).mean(axis=0), t2)
    if m2.hess12 is not None:
        RJ = -np.atleast_2d(np.asarray(m2.hess12(data.data2, t1, t2), dtype=float))
    else:
        jac = _fd_jacobian(lambda v: m2.grad(data.data2, v, t2).mean(axis=0), t1)
        RJ = -jac.T
    J1, J2 = _sym(J1), _sym(J2)
    RI = _sym_cross(g1, g2, data) if data.paired else None
    for mat, name in ((J1, "J1"), (J2, "J2")):
        if np.linalg.cond(mat) > _COND_LIMIT:
            raise NumericalError(f"{name} information matrix singular at the anchor")
    return InfoMatrices(I1=I1, J1=J1, I2=I2, J2=J2, RJ=RJ, RI=RI,
                        alpha=data.alpha, evaluated_at=at)


def _sym_cross(g1: Array, g2: Array, data: CutDataset) -> Array:
    if g1.shape[0] != g2.shape[0]:
        raise ValidationError("paired score covariance needs equal row counts")
    return g1.T @ g2 / g1.shape[0]


def sigma_scenario1(info: InfoMatrices) -> Array:
    """Sampler covariance for independent data (fresh weights per stage)."""
    J1i = _inverse(info.J1, "J1")
    J2i = _inverse(info.J2, "J2")
    S1 = J1i @ info.I1 @ J1i
    S1a = S1 / info.alpha
    top_right = -S1a @ info.RJ @ J2i
    bottom = J2i @ (info.I2 + info.RJ.T @ S1a @ info.RJ) @ J2i
    return _assemble(S1a, top_right, bottom)


def sigma_scenario2(info: InfoMatrices) -> Array:
    """Sampler covariance for paired data (one weight vector, both stages)."""
    if info.RI is None:
        raise ValidationError(
            "Scenario 2 covariance requires paired data (no cross-module "
            "score covariance is available)"
        )
    J1i = _inverse(info.J1, "J1")
    J2i = _inverse(info.J2, "J2")
    S1 = J1i @ info.I1 @ J1i
    S2 = info.RI.T @ J1i @ info.RJ + info.RJ.T @ J1i @ info.RI
    S3 = J1i @ info.RI @ J2i - S1 @ info.RJ @ J2i
    bottom = J2i @ (info.I2 + info.RJ.T @ S1 @ info.RJ - S2) @ J2i
    return _assemble(S1, S3, bottom)


def sigma_cut_laplace(info: InfoMatrices) -> Array:
    """Large-sample shape of the cut posterior itself (Laplace form)."""
    J1i = _inverse(info.J1, "J1")
    J2i = _inverse(info.J2, "J2")
    top_left = J1i / info.alpha
    top_right = -(J1i / info.alpha) @ info.RJ @ J2i
    bottom = J2i + J2i @ info.RJ.T @ (J1i / info.alpha) @ info.RJ @ J2i
    return _assemble(top_left, top_right, bottom)


def _assemble(top_left: Array, top_right: Array, bottom_right: Array) -> Array:
    top = np.hstack([top_left, top_right])
    bot = np.hstack([top_right.T, bottom_right])
    out = _sym(np.vstack([top, bot]))
    check_psd(out, "assembled covariance")
    return out


@dataclass
class CovarianceReport:
    """All covariance assemblies computable from one set of info matrices.

    sigma_s2, s2_block, s3_block are None when the data are unpaired.
    """

    sigma_s1: Array
    sigma_s2: Optional[Array]
    sigma_B: Array
    s1_block: Array
    s2_block: Optional[Array]
    s3_block: Optional[Array]
    alpha: float
    d1: int
    d2: int

    def s2_minus_B(self) -> Optional[Array]:
        if self.sigma_s2 is None:
            return None
        return self.sigma_s2 - self.sigma_B

    def to_json_dict(self) -> dict:
        def enc(m):
            return None if m is None else [[float(v) for v in row] for row in np.atleast_2d(m)]

        return {
            "alpha": float(self.alpha),
            "d1": int(self.d1),
            "d2": int(self.d2),
            "sigma_s1": enc(self.sigma_s1),
            "sigma_s2": enc(self.sigma_s2),
            "sigma_B": enc(self.sigma_B),
            "s1_block": enc(self.s1_block),
            "s2_block": enc(self.s2_block),
            "s3_block": enc(self.s3_block),
            "s2_minus_B": enc(self.s2_minus_B()),
        }


def build_covariance_report(info: InfoMatrices) -> CovarianceReport:
    """Assemble every covariance the info matrices support."""
    J1i = _inverse(info.J1, "J1")
    J2i = _inverse(info.J2, "J2")
    S1 = _sym(J1i @ info.I1 @ J1i)
    sigma_s2 = s2_block = s3_block = None
    if info.RI is not None:
        sigma_s2 = sigma_scenario2(info)
        s2_block = _sym(info.RI.T @ J1i @ info.RJ + info.RJ.T @ J1i @ info.RI)
        s3_block = J1i @ info.RI @ J2i - S1 @ info.RJ @ J2i
    return CovarianceReport(
        sigma_s1=sigma_scenario1(info),
        sigma_s2=sigma_s2,
        sigma_B=sigma_cut_laplace(info),
        s1_block=S1,
        s2_block=s2_block,
        s3_block=s3_block,
        alpha=info.alpha,
        d1=info.evaluated_at.d1,
        d2=info.evaluated_at.d2,
    )


def calibrate_prior_weights(info: InfoMatrices, prior1_factorizes: bool = True,
                            prior2_factorizes: bool = True):
    """Prior-weight calibration matching sampler spread to sampling variance.

    For each module, forms A = I^{1/2} J^{-1} I^{1/2} and returns its
    diagonal when the prior factorizes across coordinates, its trace
    otherwise. One-dimensional modules yield plain floats.
    """
    out = []
    for I, J, factorizes, name in ((info.I1, info.J1, prior1_factorizes, "module 1"),
                                   (info.I2, info.J2, prior2_factorizes, "module 2")):
        root = _psd_sqrt(I, f"{name} score covariance")
        A = root @ _inverse(J, f"{name} curvature") @ root
        if A.shape[0] == 1:
            out.append(float(A[0, 0]))
        elif factorizes:
            out.append(np.diag(A).copy())
        else:
            out.append(float(np.trace(A)))
    return tuple(out)


@dataclass
class PredictionRiskTerms:
    """First-order prediction-risk comparison for new module-2 data.

    trace_bayes uses the cut posterior's Laplace covariance; trace_pb the
    sampler covariance. More negative means lower predictive risk.
    """

    if2: Array
    jf2: Array
    trace_bayes: float
    trace_pb: float

    def to_json_dict(self) -> dict:
        return {
            "if2": [[float(v) for v in row] for row in self.if2],
            "jf2": [[float(v) for v in row] for row in self.jf2],
            "trace_bayes": float(self.trace_bayes),
            "trace_pb": float(self.trace_pb),
        }


def prediction_risk_from_matrices(if2: Array, jf2: Array, sigma_B: Array,
                                  sigma_pb: Array) -> PredictionRiskTerms:
    """Risk traces tr{(If2 - Jf2) Sigma} from explicit matrices."""
    if2 = _as_matrix(if2, "if2")
    jf2 = _as_matrix(jf2, "jf2")
    sigma_B = _as_matrix(sigma_B, "sigma_B")
    sigma_pb = _as_matrix(sigma_pb, "sigma_pb")
    d = if2.shape[0]
    for m, name in ((jf2, "jf2"), (sigma_B, "sigma_B"), (sigma_pb, "sigma_pb")):
        if m.shape != (d, d):
            raise ValidationError(f"{name} must match if2's shape ({d}, {d})")
    gap = if2 - jf2
    return PredictionRiskTerms(
        if2=if2,
        jf2=jf2,
        trace_bayes=float(np.trace(gap @ sigma_B)),
        trace_pb=float(np.trace(gap @ sigma_pb)),
    )


def prediction_risk_traces(model: CutModel, data: CutDataset, at: ParameterSplit,
                           sigma_B: Array, sigma_pb: Array) -> PredictionRiskTerms:
    """Empirical risk traces: derivative matrices of the module-2 likelihood
    over the FULL parameter (theta1, theta2), traced against the covariances.
    """
    t1, t2 = at.theta1, at.theta2
    m2 = model.module2
    g1 = np.asarray(m2.grad1(data.data2, t1, t2), dtype=float)
    g2 = np.asarray(m2.grad(data.data2, t1, t2), dtype=float)
    G = np.hstack([g1, g2])
    if2 = _sym(G.T @ G / data.n2)
    if m2.hess11 is not None:
        J11 = -np.atleast_2d(np.asarray(m2.hess11(data.data2, t1, t2), dtype=float))
    else:
        J11 = -_fd_jacobian(lambda v: m2.grad1(data.data2, v, t2).mean(axis=0), t1)
    if m2.hess12 is not None:
        J12 = -np.atleast_2d(np.asarray(m2.hess12(data.data2, t1, t2), dtype=float))
    else:
        J12 = -_fd_jacobian(lambda v: m2.grad(data.data2, v, t2).mean(axis=0), t1).T
    if m2.hess22 is not None:
        J22 = -np.atleast_2d(np.asarray(m2.hess22(data.data2, t1, t2), dtype=float))
    else:
        J22 = -_fd_jacobian(lambda v: m2.grad(data.data2, t1, v).mean(axis=0), t2)
    jf2 = _sym(np.vstack([np.hstack([_sym(J11), J12]),
                          np.hstack([J12.T, _sym(J22)])]))
    return prediction_risk_from_matrices(if2, jf2, sigma_B, sigma_pb)


def write_json(payload: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
