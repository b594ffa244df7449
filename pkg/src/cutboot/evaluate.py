"""Predictive scoring, two-sample dissimilarity, coverage studies, and
highest-density regions for comparing samplers."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.stats import chi2

from . import zoo
from .baselines import (
    NestedMcmcConfig,
    cut_exact_gaussian,
    cut_nested_metropolis,
    full_gaussian_bayes,
    full_posterior_bootstrap,
)
from .core import (
    CutbootError,
    CutDataset,
    CutModel,
    ValidationError,
)
from .sampler import SampleSet, pbmi_scenario1, pbmi_scenario2

Array = np.ndarray

_FMT = "%.17g"


def elpd(samples: SampleSet, model: CutModel, new_data, module: int = 2) -> float:
    """Expected log pointwise predictive density on held-out data.

    Mixes the posterior draws inside the log (log of the draw-averaged
    density), then SUMS over the new observations. ``new_data`` is a data
    block for the chosen module. Observations whose predictive density
    underflows to zero are reported in a warning and contribute -inf.
    """
    if module not in (1, 2):
        raise ValidationError("module must be 1 or 2")
    t1s, t2s = samples.retained()
    n_ok = t1s.shape[0]
    if n_ok < 1:
        raise ValidationError("no successfully converged draws to score with")
    m = np.asarray(new_data).shape[0]
    if m < 1:
        raise ValidationError("new_data must contain at least one observation")
    acc = np.full(m, -np.inf)
    for k in range(n_ok):
        if module == 2:
            ll = np.asarray(model.module2.loglik(new_data, t1s[k], t2s[k]), dtype=float)
        else:
            ll = np.asarray(model.module1.loglik(new_data, t1s[k]), dtype=float)
        ll = np.where(np.isnan(ll), -np.inf, ll)
        acc = np.logaddexp(acc, ll)
    pointwise = acc - np.log(n_ok)
    dead = ~np.isfinite(pointwise)
    if dead.any():
        warnings.warn(
            f"{int(dead.sum())} of {m} held-out observations have zero predictive "
            f"density under every draw (indices {np.flatnonzero(dead)[:10].tolist()})"
        )
    return float(np.sum(pointwise))


def elpd_loo(method: Callable[[CutDataset], SampleSet], model: CutModel,
             data: CutDataset, module: int = 2) -> float:
    """Leave-one-out predictive score by refitting without each observation.

    Only the chosen module's data are reduced; the other module keeps its
    full sample. ``method`` maps a reduced dataset to draws. Folds whose
    refit fails are skipped with a warning and drop out of the sum.
    """
    if module not in (1, 2):
        raise ValidationError("module must be 1 or 2")
    block = data.data2 if module == 2 else data.data1
    n = block.shape[0]
    if n < 2:
        raise ValidationError("leave-one-out needs at least two observations")
    total = 0.0
    failures = 0
    for i in range(n):
        if module == 2:
            reduced = CutDataset(data.data1, np.delete(data.data2, i, axis=0),
                                 paired=False)
        else:
            reduced = CutDataset(np.delete(data.data1, i, axis=0), data.data2,
                                 paired=False)
        held_out = block[i:i + 1]
        try:
            draws = method(reduced)
            total += elpd(draws, model, held_out, module=module)
        except CutbootError as exc:
            failures += 1
            warnings.warn(f"leave-one-out fold {i} failed and was skipped: {exc}")
    if failures:
        warnings.warn(f"{failures} of {n} leave-one-out folds failed")
    return float(total)


def ks_dissimilarity(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: sup |ECDF_a - ECDF_b|."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size < 1 or b.size < 1:
        raise ValidationError("both samples must be non-empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("samples must be finite")
    a_sorted = np.sort(a)
    b_sorted = np.sort(b)
    grid = np.concatenate([a_sorted, b_sorted])
    cdf_a = np.searchsorted(a_sorted, grid, side="right") / a.size
    cdf_b = np.searchsorted(b_sorted, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


@dataclass
class CoverageExperimentConfig:
    """Replicated interval-coverage study on a zoo model.

    ``method`` is one of "pbmi_s1", "pbmi_s2", "cut_bayes", or a callable
    (dataset, n_draws, seed) -> SampleSet. ``target`` selects the checked
    block: "theta1", "theta2" (scalar blocks get equal-tailed quantile
    intervals), or "joint" (normal-theory ellipsoid over all coordinates).
    """

    model_id: str
    n_grid: tuple = (2000,)
    replicates: int = 100
    nominal: float = 0.95
    method: Union[str, Callable] = "pbmi_s2"
    target: str = "theta2"
    n_draws: int = 600
    seed: int = 0
    w0: float = 1.0
    v0: float = 1.0
    generator_knobs: dict = field(default_factory=dict)
    model_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.nominal < 1.0:
            raise ValidationError("nominal level must be in (0, 1)")
        if self.replicates < 20:
            raise ValidationError("need at least 20 replicates for a stable estimate")
        if self.target not in ("theta1", "theta2", "joint"):
            raise ValidationError("target must be theta1, theta2, or joint")
        if any(int(n) < 2 for n in self.n_grid) or len(self.n_grid) < 1:
            raise ValidationError("n_grid entries must be >= 2")
        if self.n_draws < 50:
            raise ValidationError("n_draws must be >= 50")


@dataclass
class CoverageRow:
    n: int
    method: str
    target: str
    nominal: float
    coverage: float
    mc_se: float
    replicates_used: int
    failures: int


def _method_name(method) -> str:
    return method if isinstance(method, str) else getattr(method, "__name__", "custom")


def _run_method(method, model, data, n_draws, seed, w0, v0) -> SampleSet:
    if callable(method):
        return method(data, n_draws, seed)
    if method == "pbmi_s1":
        return pbmi_scenario1(model, data, n_draws, w0=w0, v0=v0, seed=seed)
    if method == "pbmi_s2":
        return pbmi_scenario2(model, data, n_draws, w0=w0, v0=v0, seed=seed)
    if method == "cut_bayes":
        if model.gaussian_cut is not None:
            return cut_exact_gaussian(model, data, n_draws, seed=seed)
        cfg = NestedMcmcConfig(outer_draws=n_draws)
        return cut_nested_metropolis(model, data, cfg, seed=seed)
    raise ValidationError(
        f"unknown method {method!r}; choose pbmi_s1, pbmi_s2, cut_bayes, or a callable"
    )


def _target_draws(samples: SampleSet, target: str) -> Array:
    t1, t2 = samples.retained()
    if target == "theta1":
        return t1
    if target == "theta2":
        return t2
    return np.hstack([t1, t2])


def _target_truth(truth, target: str) -> Array:
    if target == "theta1":
        return truth.theta1
    if target == "theta2":
        return truth.theta2
    return truth.stacked()


def _covered(draws: Array, truth: Array, nominal: float, target: str) -> bool:
    if target != "joint" and draws.shape[1] == 1:
        lo, hi = np.quantile(draws[:, 0], [(1 - nominal) / 2, (1 + nominal) / 2])
        return bool(lo <= truth[0] <= hi)
    center = draws.mean(axis=0)
    cov = np.cov(draws, rowvar=False)
    cov = np.atleast_2d(cov)
    delta = truth - center
    stat = float(delta @ np.linalg.solve(cov, delta))
    return stat <= float(chi2.ppf(nominal, truth.size))


def coverage_experiment(config: CoverageExperimentConfig) -> list:
    """Empirical coverage of the method's intervals across replicates.

    Each replicate draws fresh data from the model's generating process,
    runs the method, and checks whether the pseudo-true value falls in the
    equal-tailed (or ellipsoidal) region. Returns one CoverageRow per n.
    Replicates that raise are counted as failures and excluded.
    """
    model = zoo.get_model(config.model_id, **config.model_kwargs)
    truth = zoo.pseudo_true(config.model_id, **config.generator_knobs)
    truth_vec = _target_truth(truth, config.target)
    rows = []
    for ni, n in enumerate(config.n_grid):
        hits = 0
        used = 0
        failures = 0
        for r in range(config.replicates):
            ss = np.random.SeedSequence(entropy=config.seed, spawn_key=(ni, r))
            data_seed, fit_seed = (int(s) for s in ss.generate_state(2))
            try:
                data = zoo.generate(config.model_id, seed=data_seed,
                                    n=int(n), **config.generator_knobs)
                samples = _run_method(config.method, model, data,
                                      config.n_draws, fit_seed,
                                      config.w0, config.v0)
                draws = _target_draws(samples, config.target)
                hits += _covered(draws, truth_vec, config.nominal, config.target)
                used += 1
            except CutbootError as exc:
                failures += 1
                warnings.warn(f"replicate (n={n}, r={r}) failed: {exc}")
        coverage = hits / used if used else float("nan")
        se = float(np.sqrt(coverage * (1 - coverage) / used)) if used else float("nan")
        rows.append(CoverageRow(n=int(n), method=_method_name(config.method),
                                target=config.target, nominal=config.nominal,
                                coverage=float(coverage), mc_se=se,
                                replicates_used=used, failures=failures))
    return rows


def coverage_rows_to_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("n,method,target,nominal,coverage,mc_se,replicates_used,failures\n")
        for row in rows:
            fh.write(",".join([
                str(row.n), row.method, row.target,
                _FMT % row.nominal, _FMT % row.coverage, _FMT % row.mc_se,
                str(row.replicates_used), str(row.failures),
            ]) + "\n")


@dataclass
class HdrGrid:
    """A 2-d kernel-density grid with the cutoff for a mass-level region.

    ``density[i, j]`` is the estimate at (xs[j], ys[i]); the region is
    {density >= level} and integrates (over grid cells) to the requested
    mass. xs/ys have equal length; the grid extends 3 bandwidths past the
    sample range, or to explicit ``bounds`` when common axes are needed.
    """

    xs: Array
    ys: Array
    density: Array
    level: float
    mass: float

    def mask(self) -> Array:
        return self.density >= self.level

    def area(self) -> float:
        cell = (self.xs[1] - self.xs[0]) * (self.ys[1] - self.ys[0])
        return float(self.mask().sum() * cell)

    def contains(self, points) -> Array:
        """Nearest-cell membership of (m, 2) points in the region."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ix = np.clip(np.searchsorted(self.xs, pts[:, 0]), 1, self.xs.size - 1)
        iy = np.clip(np.searchsorted(self.ys, pts[:, 1]), 1, self.ys.size - 1)
        ix -= (pts[:, 0] - self.xs[ix - 1]) < (self.xs[ix] - pts[:, 0])
        iy -= (pts[:, 1] - self.ys[iy - 1]) < (self.ys[iy] - pts[:, 1])
        return self.density[iy, ix] >= self.level

    def to_json_dict(self) -> dict:
        return {
            "xs": [float(v) for v in self.xs],
            "ys": [float(v) for v in self.ys],
            "density": [[float(v) for v in row] for row in self.density],
            "level": float(self.level),
        }


def _kde_axis_values(grid: Array, points: Array, bandwidth: float) -> Array:
    u = (grid[:, None] - points[None, :]) / bandwidth
    return np.exp(-0.5 * u * u)


def hdr_region(samples, mass: float = 0.95, grid_size: int = 200,
               bounds=None) -> HdrGrid:
    """Highest-density region of a 2-d sample via a product-Gaussian KDE.

    Per-axis bandwidths follow n^(-1/6) times the axis standard deviation.
    ``bounds`` = ((x_lo, x_hi), (y_lo, y_hi)) pins the grid, letting regions
    from different samples share axes. The level is the largest density
    cutoff whose grid cells hold at least ``mass`` of the estimated density.
    """
    pts = np.atleast_2d(np.asarray(samples, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError("samples must be an (n, 2) array")
    n = pts.shape[0]
    if n < 100:
        raise ValidationError("need at least 100 samples for a stable region")
    if not 0.0 < mass < 1.0:
        raise ValidationError("mass must be in (0, 1)")
    if grid_size < 10:
        raise ValidationError("grid_size must be >= 10")
    sds = pts.std(axis=0)
    if np.any(sds == 0):
        raise ValidationError("degenerate sample: zero variance along an axis")
    h = sds * n ** (-1.0 / 6.0)
    if bounds is None:
        lo = pts.min(axis=0) - 3.0 * h
        hi = pts.max(axis=0) + 3.0 * h
    else:
        (x_lo, x_hi), (y_lo, y_hi) = bounds
        lo = np.array([x_lo, y_lo], dtype=float)
        hi = np.array([x_hi, y_hi], dtype=float)
        if np.any(hi <= lo):
            raise ValidationError("bounds must have positive extent")
    xs = np.linspace(lo[0], hi[0], grid_size)
    ys = np.linspace(lo[1], hi[1], grid_size)
    density = np.zeros((grid_size, grid_size))
    norm = 1.0 / (n * 2.0 * np.pi * h[0] * h[1])
    for start in range(0, n, 20000):
        chunk = pts[start:start + 20000]
        ax = _kde_axis_values(xs, chunk[:, 0], h[0])
        ay = _kde_axis_values(ys, chunk[:, 1], h[1])
        density += ay @ ax.T
    density *= norm
    cell = (xs[1] - xs[0]) * (ys[1] - ys[0])
    flat = np.sort(density.reshape(-1))[::-1]
    cum = np.cumsum(flat) * cell
    idx = int(np.searchsorted(cum, mass))
    level = float(flat[idx]) if idx < flat.size else 0.0
    return HdrGrid(xs=xs, ys=ys, density=density, level=level, mass=mass)


@dataclass
class ElpdRow:
    replicate: int
    n2: int
    method: str
    elpd: float


def elpd_comparison(n2_values=(100, 1000), replicates: int = 50,
                    sigma1_sq: float = 1.0, sigma2_sq: float = 0.5,
                    n_draws: int = 800, n_test: int = 4000,
                    seed: int = 0, w0: float = 1.0, v0: float = 0.5) -> list:
    """Replicated predictive comparison on the biased location pair.

    For each replicate: generate training data (n1 = n2/10), run the
    two-stage weighted sampler, the exact cut posterior, the joint
    conjugate posterior, and the joint weighted sampler, then score all
    four on a fresh module-1 test sample — the quantity of interest is
    prediction of new first-module observations, which is exactly where
    feedback from the biased second module hurts. Returns ElpdRow records.
    """
    model = zoo.biased_model()
    rows = []
    for n2 in n2_values:
        n2 = int(n2)
        n1 = max(2, n2 // 10)
        for r in range(replicates):
            ss = np.random.SeedSequence(entropy=seed, spawn_key=(n2, r))
            s_data, s_test, s_fit = (int(s) for s in ss.generate_state(3))
            data = zoo.biased_generate(n1=n1, n2=n2, sigma1_sq=sigma1_sq,
                                       sigma2_sq=sigma2_sq, seed=s_data)
            test_rng = np.random.default_rng(s_test)
            test = np.sqrt(sigma1_sq) * test_rng.standard_normal(n_test)
            arms = {
                "pbmi": pbmi_scenario1(model, data, n_draws, w0=w0, v0=v0,
                                       seed=s_fit),
                "cut_bayes": cut_exact_gaussian(model, data, n_draws, seed=s_fit),
                "full_bayes": full_gaussian_bayes(model, data, n_draws, seed=s_fit),
                "full_pb": full_posterior_bootstrap(model, data, n_draws,
                                                    w0=w0, v0=v0, seed=s_fit),
            }
            for name, samples in arms.items():
                rows.append(ElpdRow(replicate=r, n2=n2, method=name,
                                    elpd=elpd(samples, model, test, module=1)))
    return rows


def elpd_rows_to_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("replicate,n2,method,elpd\n")
        for row in rows:
            fh.write(f"{row.replicate},{row.n2},{row.method}," + _FMT % row.elpd + "\n")


def elpd_medians(rows) -> dict:
    """Median elpd per (n2, method)."""
    out = {}
    for row in rows:
        out.setdefault((row.n2, row.method), []).append(row.elpd)
    return {key: float(np.median(vals)) for key, vals in out.items()}
