"""Weighted-optimization posterior sampling for cut models.

Each draw k assigns independent Exp(1) weights to observations (and fixed
weights w0, v0 to the log-priors), then solves the two weighted stages:

    theta1_k  maximizes  sum_j w_j l1(x1_j; theta1) + w0 . log pi1(theta1)
    theta2_k  maximizes  sum_j v_j l2(x2_j; theta1_k, theta2) + v0 . log pi2

The independent-data scenario draws w and v separately; the paired-data
scenario reuses the same weight vector in both stages. Draws are mutually
independent, so they parallelize across processes; every draw derives its
randomness from a stream keyed by (seed, draw index), which makes results
byte-identical for any worker count.
"""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__ as _pkg_version
from .core import (
    Array,
    CutDataset,
    CutModel,
    InfeasibleStartError,
    SamplingFailureError,
    ValidationError,
    m1_value_and_grad,
    m2_value_and_grad,
)
from .optimize import (MleEstimates, OptimizerConfig, fit_mle, maximize,
                       resolve_optimizer)

_FLOAT_FMT = "%.17g"
_MULTIGROUP_VARIANTS = ("weighted_bernoulli", "conjugate_beta", "pseudosample")


def draw_stream(seed: int, k: int) -> np.random.Generator:
    """Independent random stream for draw k of a run.

    The same (seed, k) always yields the same stream, regardless of how
    draws are scheduled across workers.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(k,)))


def exp_weights(n: int, stream: np.random.Generator) -> Array:
    """n independent Exp(1) weights, floored away from exact zero."""
    if n < 1:
        raise ValidationError("weight vectors need at least one entry")
    w = stream.standard_exponential(n)
    return np.maximum(w, np.finfo(float).tiny)


def resolve_workers(workers: Optional[int] = None, default: int = 1) -> int:
    """Worker count: explicit argument, else CUTBOOT_WORKERS, else ``default``.

    Library entry points default to 1; the command-line driver passes the
    machine's core count as its default.
    """
    if workers is None:
        env = os.environ.get("CUTBOOT_WORKERS", "").strip()
        workers = int(env) if env else default
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    return workers


@dataclass
class SampleSet:
    """Draws from a sampler, with per-draw convergence flags.

    Failed draws stay in the arrays (flag False) but are excluded from
    summaries; ``retained()`` returns only the successful rows.
    """

    theta1: Array
    theta2: Array
    scenario: str
    seed: int
    w0: object
    v0: object
    converged: Array
    model_id: str = ""
    data_digest: str = ""
    diagnostics: Optional[dict] = None

    def __post_init__(self):
        self.theta1 = np.atleast_2d(np.asarray(self.theta1, dtype=float))
        self.theta2 = np.atleast_2d(np.asarray(self.theta2, dtype=float))
        self.converged = np.asarray(self.converged, dtype=bool)
        if self.theta1.shape[0] != self.theta2.shape[0]:
            raise ValidationError("theta1 and theta2 must have one row per draw")
        if self.converged.shape != (self.theta1.shape[0],):
            raise ValidationError("converged must have one flag per draw")

    @property
    def size(self) -> int:
        return self.theta1.shape[0]

    @property
    def d1(self) -> int:
        return self.theta1.shape[1]

    @property
    def d2(self) -> int:
        return self.theta2.shape[1]

    @property
    def failure_rate(self) -> float:
        return float(1.0 - np.mean(self.converged))

    def retained(self) -> tuple:
        ok = self.converged
        return self.theta1[ok], self.theta2[ok]

    def joint(self) -> Array:
        """Retained draws stacked as (n_ok, d1 + d2)."""
        t1, t2 = self.retained()
        return np.hstack([t1, t2])

    def to_csv(self, path) -> None:
        header = (["draw"]
                  + [f"theta1_{i + 1}" for i in range(self.d1)]
                  + [f"theta2_{i + 1}" for i in range(self.d2)]
                  + ["converged"])
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for k in range(self.size):
                row = [str(k)]
                row += [_FLOAT_FMT % v for v in self.theta1[k]]
                row += [_FLOAT_FMT % v for v in self.theta2[k]]
                row.append(str(int(self.converged[k])))
                fh.write(",".join(row) + "\n")

    def manifest(self) -> dict:
        def weight_json(w):
            arr = np.asarray(w, dtype=float)
            return float(arr) if arr.ndim == 0 else [float(v) for v in arr]

        return {
            "model_id": self.model_id,
            "scenario": self.scenario,
            "seed": int(self.seed),
            "n_draws": int(self.size),
            "w0": weight_json(self.w0),
            "v0": weight_json(self.v0),
            "data_digest": self.data_digest,
            "failure_rate": self.failure_rate,
            "package_version": _pkg_version,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }

    def write_manifest(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def read_csv(path, manifest_path=None) -> "SampleSet":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        d1 = sum(1 for h in header if h.startswith("theta1_"))
        d2 = sum(1 for h in header if h.startswith("theta2_"))
        if d1 < 1 or d2 < 1 or header[0] != "draw" or header[-1] != "converged":
            raise ValidationError(f"{path} is not a sample CSV")
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = {}
        if manifest_path is not None and os.path.exists(manifest_path):
            with open(manifest_path) as fh:
                meta = json.load(fh)
        return SampleSet(
            theta1=raw[:, 1:1 + d1],
            theta2=raw[:, 1 + d1:1 + d1 + d2],
            scenario=meta.get("scenario", "unknown"),
            seed=int(meta.get("seed", -1)),
            w0=meta.get("w0", 0.0),
            v0=meta.get("v0", 0.0),
            converged=raw[:, -1] > 0.5,
            model_id=meta.get("model_id", ""),
            data_digest=meta.get("data_digest", ""),
        )


def _multigroup_theta1(successes: Array, trials: Array, variant: str,
                       pseudo_count, stream: np.random.Generator) -> Array:
    """One stage-1 draw for a per-group binomial first module."""
    if variant == "conjugate_beta":
        return stream.beta(1.0 + successes, 1.0 + trials - successes)
    out = np.empty(successes.size)
    for i in range(successes.size):
        n_i, z_i = int(trials[i]), int(successes[i])
        if variant == "weighted_bernoulli":
            w = exp_weights(n_i, stream)
            out[i] = w[:z_i].sum() / w.sum()
        else:  # pseudosample: prior-predictive pseudo-trials replace the prior
            probs = stream.uniform(size=pseudo_count)
            pseudo_z = stream.uniform(size=pseudo_count) < probs
            w = exp_weights(n_i + pseudo_count, stream)
            num = w[:z_i].sum() + w[n_i:][pseudo_z].sum()
            out[i] = num / w.sum()
    return out


def _validate_counts(successes: Array, trials: Array) -> None:
    if np.any(successes < 0) or np.any(trials < 1):
        raise ValidationError("group counts need trials >= 1 and successes >= 0")
    if np.any(successes > trials):
        raise ValidationError("group successes exceed trials")


def pbmi_multigroup_stage1(model: CutModel, data: CutDataset, n_draws: int,
                           variant: str = "weighted_bernoulli", seed: int = 0,
                           pseudo_count: Optional[int] = None) -> Array:
    """Stage-1 draws for models whose first module is per-group binomial.

    Variants: ``weighted_bernoulli`` re-weights every underlying Bernoulli
    trial with an Exp(1) weight (no prior term); ``conjugate_beta`` draws the
    exact Beta(1 + z, 1 + n - z) posteriors; ``pseudosample`` appends
    ``pseudo_count`` prior-predictive pseudo-trials per group in place of a
    prior penalty. Returns an (n_draws, groups) array.
    """
    if model.grouped_binomial is None:
        raise ValidationError(f"model {model.model_id!r} has no grouped binomial module")
    if variant not in _MULTIGROUP_VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}; choose from {_MULTIGROUP_VARIANTS}")
    if variant == "pseudosample" and (pseudo_count is None or pseudo_count < 1):
        raise ValidationError("pseudosample variant requires pseudo_count >= 1")
    if n_draws < 1:
        raise ValidationError("n_draws must be >= 1")
    successes, trials = model.grouped_binomial.counts(data.data1)
    successes = np.asarray(successes)
    trials = np.asarray(trials)
    _validate_counts(successes, trials)
    out = np.empty((n_draws, successes.size))
    for k in range(n_draws):
        out[k] = _multigroup_theta1(successes, trials, variant, pseudo_count,
                                    draw_stream(seed, k))
    return out


def _run_draw_range(model, data, anchor1, anchor2, ks, scenario, w0, v0,
                    config, seed, unit_weights, multigroup_variant, pseudo_count):
    """Execute a contiguous block of draws; used as the process-pool task."""
    grouped = model.grouped_binomial
    if grouped is not None and scenario == "S1" and not unit_weights:
        successes, trials = grouped.counts(data.data1)
        successes = np.asarray(successes)
        trials = np.asarray(trials)
    t1 = np.empty((len(ks), anchor1.size))
    t2 = np.empty((len(ks), anchor2.size))
    flags = np.empty(len(ks), dtype=bool)
    for j, k in enumerate(ks):
        stream = draw_stream(seed, k)
        try:
            if unit_weights:
                w = np.ones(data.n1)
            elif scenario == "S2":
                w = exp_weights(data.n1, stream)
            elif grouped is not None:
                w = None
            else:
                w = exp_weights(data.n1, stream)
            if w is None:
                theta1 = _multigroup_theta1(successes, trials, multigroup_variant,
                                            pseudo_count, stream)
                ok1 = True
            else:
                fg1 = m1_value_and_grad(model.module1, data.data1, w, w0)
                theta1, diag1 = maximize(fg1, anchor1, config)
                ok1 = diag1.converged
            if unit_weights:
                v = np.ones(data.n2)
            elif scenario == "S2":
                v = w
            else:
                v = exp_weights(data.n2, stream)
            fg2 = m2_value_and_grad(model.module2, data.data2, v, v0, theta1)
            theta2, diag2 = maximize(fg2, anchor2, config)
            t1[j], t2[j], flags[j] = theta1, theta2, ok1 and diag2.converged
        except InfeasibleStartError:
            t1[j], t2[j], flags[j] = np.nan, np.nan, False
    return t1, t2, flags


def _run_sampler(model: CutModel, data: CutDataset, n_draws: int, scenario: str,
                 w0, v0, seed, workers, config, unit_weights,
                 multigroup_variant, pseudo_count) -> SampleSet:
    if n_draws < 1:
        raise ValidationError("n_draws must be >= 1")
    if scenario == "S2" and not data.paired:
        raise ValidationError("the paired-weights scenario requires a paired dataset")
    if multigroup_variant not in _MULTIGROUP_VARIANTS:
        raise ValidationError(f"unknown multigroup variant {multigroup_variant!r}")
    if (model.grouped_binomial is not None and multigroup_variant == "pseudosample"
            and (pseudo_count is None or pseudo_count < 1)):
        raise ValidationError("pseudosample variant requires pseudo_count >= 1")
    workers = resolve_workers(workers)
    config = resolve_optimizer(config, model)
    mle = fit_mle(model, data, config)
    anchor1, anchor2 = mle.theta1_hat, mle.theta2_hat
    ks = np.arange(n_draws)
    args = (scenario, w0, v0, config, seed, unit_weights,
            multigroup_variant, pseudo_count)
    if workers == 1:
        parts = [_run_draw_range(model, data, anchor1, anchor2, ks, *args)]
    else:
        chunks = [c for c in np.array_split(ks, workers * 4) if c.size]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_draw_range, model, data, anchor1,
                                   anchor2, chunk, *args)
                       for chunk in chunks]
            parts = [f.result() for f in futures]
    theta1 = np.vstack([p[0] for p in parts])
    theta2 = np.vstack([p[1] for p in parts])
    flags = np.concatenate([p[2] for p in parts])
    samples = SampleSet(theta1=theta1, theta2=theta2, scenario=scenario,
                        seed=seed, w0=w0, v0=v0, converged=flags,
                        model_id=model.model_id, data_digest=data.digest())
    if samples.failure_rate > 0.05:
        raise SamplingFailureError(
            f"{samples.failure_rate:.1%} of draws failed to converge (limit 5%)",
            samples=samples,
        )
    return samples


def pbmi_scenario1(model: CutModel, data: CutDataset, n_draws: int,
                   w0=0.0, v0=0.0, seed: int = 0, workers: Optional[int] = None,
                   config: Optional[OptimizerConfig] = None,
                   unit_weights: bool = False,
                   multigroup_variant: str = "weighted_bernoulli",
                   pseudo_count: Optional[int] = None) -> SampleSet:
    """Independent-data sampler: fresh Exp(1) weights for each stage.

    ``unit_weights=True`` is a debugging mode that sets every observation
    weight to 1, collapsing all draws onto the penalized two-stage optimum.
    Models with a grouped-binomial first module use the group-level stage-1
    draw selected by ``multigroup_variant``.
    """
    return _run_sampler(model, data, n_draws, "S1", w0, v0, seed, workers,
                        config, unit_weights, multigroup_variant, pseudo_count)


def pbmi_scenario2(model: CutModel, data: CutDataset, n_draws: int,
                   w0=0.0, v0=0.0, seed: int = 0, workers: Optional[int] = None,
                   config: Optional[OptimizerConfig] = None,
                   unit_weights: bool = False) -> SampleSet:
    """Paired-data sampler: one weight vector shared by both stages.

    Requires a paired dataset (one weight per observation pair); the prior
    weights w0 and v0 remain separate.
    """
    return _run_sampler(model, data, n_draws, "S2", w0, v0, seed, workers,
                        config, unit_weights, "weighted_bernoulli", None)
