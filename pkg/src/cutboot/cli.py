"""Command-line interface: simulate, fit, asymptotics, evaluate.

Every run writes machine-readable artifacts (CSV samples/tables, JSON
summaries) into --out. Exit codes: 0 success, 2 invalid inputs or
incompatible model/method combinations, 3 sampling failure (too many
non-converged draws), 4 numerical failure (singular information).
Flags may be collected in a JSON file passed via --config; file values
override conflicting flags with a warning. CUTBOOT_WORKERS sets the
default worker count.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import zoo
from .asymptotics import (
    build_covariance_report,
    calibrate_prior_weights,
    estimate_info,
    prediction_risk_traces,
    sigma_cut_laplace,
    sigma_scenario1,
    sigma_scenario2,
    write_json,
)
from .baselines import (
    NestedMcmcConfig,
    cut_exact_gaussian,
    cut_nested_metropolis,
    full_gaussian_bayes,
    full_posterior_bootstrap,
)
from .core import (
    CutDataset,
    NumericalError,
    ParameterSplit,
    SamplingFailureError,
    ValidationError,
)
from .evaluate import (
    CoverageExperimentConfig,
    coverage_experiment,
    coverage_rows_to_csv,
    elpd_comparison,
    elpd_medians,
    elpd_rows_to_csv,
    hdr_region,
    ks_dissimilarity,
)
from .optimize import OptimizerConfig, fit_mle
from .sampler import SampleSet, pbmi_scenario1, pbmi_scenario2, resolve_workers

FIT_METHODS = ("pbmi_s1", "pbmi_s2", "cut_bayes_exact", "cut_bayes_mcmc",
               "full_bayes", "full_pb")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cutboot",
        description="Weighted-optimization posterior sampling for two-module cut models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", choices=zoo.MODEL_IDS)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default: current)")
        p.add_argument("--config", help="JSON file of options; overrides flags")

    p_sim = sub.add_parser("simulate", help="draw a synthetic dataset")
    common(p_sim)
    p_sim.add_argument("--n", type=int)
    p_sim.add_argument("--n1", type=int)
    p_sim.add_argument("--n2", type=int)
    p_sim.add_argument("--rho", type=float)
    p_sim.add_argument("--sigma2", type=float)
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="sample a posterior with the chosen method")
    common(p_fit)
    p_fit.add_argument("--method", choices=FIT_METHODS)
    p_fit.add_argument("--data", help="dataset CSV (else data are generated)")
    p_fit.add_argument("--n", type=int)
    p_fit.add_argument("--n1", type=int)
    p_fit.add_argument("--n2", type=int)
    p_fit.add_argument("--rho", type=float)
    p_fit.add_argument("--sigma2", type=float)
    p_fit.add_argument("--N", type=int, dest="n_draws")
    p_fit.add_argument("--w0", help="float or 'calibrate'")
    p_fit.add_argument("--v0", help="float or 'calibrate'")
    p_fit.add_argument("--workers", type=int)
    p_fit.set_defaults(func=cmd_fit)

    p_asy = sub.add_parser("asymptotics",
                           help="plug-in covariances and risk traces at the MLE")
    common(p_asy)
    p_asy.add_argument("--method", choices=("pbmi_s1", "pbmi_s2"))
    p_asy.add_argument("--data")
    p_asy.add_argument("--n", type=int)
    p_asy.add_argument("--n1", type=int)
    p_asy.add_argument("--n2", type=int)
    p_asy.add_argument("--rho", type=float)
    p_asy.add_argument("--sigma2", type=float)
    p_asy.set_defaults(func=cmd_asymptotics)

    p_eval = sub.add_parser("evaluate", help="coverage, hdr, elpd, or ks studies")
    common(p_eval)
    p_eval.add_argument("--kind", choices=("coverage", "hdr", "elpd-compare", "ks"))
    p_eval.add_argument("--rho", type=float)
    p_eval.add_argument("--sigma2", type=float)
    p_eval.add_argument("--n", help="comma-separated sizes for coverage")
    p_eval.add_argument("--n2", help="comma-separated module-2 sizes for elpd")
    p_eval.add_argument("--replicates", type=int)
    p_eval.add_argument("--N", type=int, dest="n_draws")
    p_eval.add_argument("--nominal", type=float)
    p_eval.add_argument("--methods", help="comma-separated coverage methods")
    p_eval.add_argument("--target", choices=("theta1", "theta2", "joint"))
    p_eval.add_argument("--mass", type=float)
    p_eval.add_argument("--input", help="samples.csv for hdr/ks")
    p_eval.add_argument("--input2", help="second samples.csv for ks")
    p_eval.add_argument("--column", help="sample column for ks (default theta2_1)")
    p_eval.add_argument("--w0", help="float or 'calibrate'")
    p_eval.add_argument("--v0", help="float or 'calibrate'")
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    """Flags plus config-file values; file values win with a warning."""
    params = {k: v for k, v in vars(args).items() if k not in ("func", "command", "config")}
    extras = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_values = json.load(fh)
        if not isinstance(file_values, dict):
            raise ValidationError("config file must contain a JSON object")
        for key, value in file_values.items():
            if key in params:
                if params[key] is not None and params[key] != value:
                    print(f"warning: config file overrides --{key.replace('_', '-')} "
                          f"({params[key]!r} -> {value!r})", file=sys.stderr)
                params[key] = value
            else:
                extras[key] = value
    params["_extras"] = extras
    return params


def _outdir(params) -> str:
    out = params.get("out") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _require(params, key):
    if params.get(key) is None:
        raise ValidationError(f"--{key.replace('_', '-')} is required")
    return params[key]


def _generator_knobs(model_id: str, params: dict) -> dict:
    knobs = dict(params.get("_extras", {}).get("generator_knobs", {}))
    if model_id == "toy":
        for src, dst in (("n", "n"), ("rho", "rho"), ("sigma2", "sigma2")):
            if params.get(src) is not None:
                knobs[dst] = params[src]
    elif model_id == "biased":
        for key in ("n1", "n2"):
            if params.get(key) is not None:
                knobs[key] = params[key]
    elif model_id == "counterexample":
        if params.get("n") is not None:
            knobs["n"] = params["n"]
        if params.get("sigma2") is not None:
            if params["sigma2"] <= 0:
                raise ValidationError("sigma2 must be positive")
            knobs["sigma"] = float(np.sqrt(params["sigma2"]))
    elif model_id == "causal":
        if params.get("n") is not None:
            knobs["n"] = params["n"]
    return knobs


def _load_or_generate(model_id: str, params: dict, seed: int) -> CutDataset:
    if params.get("data"):
        return zoo.load_dataset_csv(model_id, params["data"])
    return zoo.generate(model_id, seed=seed, **_generator_knobs(model_id, params))


def _parse_prior_weight(raw, default=0.0):
    if raw is None:
        return default, False
    if isinstance(raw, str):
        if raw.strip().lower() == "calibrate":
            return None, True
        return float(raw), False
    return float(raw), False


def _model_kwargs(model_id: str, params: dict) -> dict:
    allowed = {"biased": ("model_variances",), "causal": ("p",),
               "epi": ("groups", "log_offset")}.get(model_id, ())
    extras = params.get("_extras", {})
    return {k: extras[k] for k in allowed if k in extras}


def cmd_simulate(args) -> int:
    params = _merge_config(args)
    model_id = _require(params, "model")
    seed = params.get("seed") or 0
    out = _outdir(params)
    data = zoo.generate(model_id, seed=seed, **_generator_knobs(model_id, params))
    data_path = os.path.join(out, f"{model_id}_data.csv")
    zoo.write_dataset_csv(model_id, data, data_path)
    manifest = {
        "artifact": "dataset",
        "model_id": model_id,
        "seed": int(seed),
        "n1": data.n1,
        "n2": data.n2,
        "paired": data.paired,
        "knobs": _generator_knobs(model_id, params),
        "data_digest": data.digest(),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    write_json(manifest, os.path.join(out, "manifest.json"))
    print(data_path)
    return 0


def _resolve_weights(params, model, data):
    w0_raw, w0_cal = _parse_prior_weight(params.get("w0"))
    v0_raw, v0_cal = _parse_prior_weight(params.get("v0"))
    if not (w0_cal or v0_cal):
        return w0_raw, v0_raw
    mle = fit_mle(model, data)
    info = estimate_info(model, data, ParameterSplit(mle.theta1_hat, mle.theta2_hat))
    w0_fit, v0_fit = calibrate_prior_weights(
        info, model.module1.prior_factorizes, model.module2.prior_factorizes)
    return (w0_fit if w0_cal else w0_raw), (v0_fit if v0_cal else v0_raw)


def _summarize(samples: SampleSet, extra: dict) -> dict:
    t1, t2 = samples.retained()
    if t1.shape[0] == 0:
        raise SamplingFailureError("no draws survived to summarize")
    joint = np.hstack([t1, t2])
    names = [f"theta1_{i + 1}" for i in range(t1.shape[1])] + \
            [f"theta2_{i + 1}" for i in range(t2.shape[1])]
    qs = (2.5, 25.0, 50.0, 75.0, 97.5)
    quantiles = {
        name: {str(q): float(v) for q, v in
               zip(qs, np.percentile(joint[:, j], qs))}
        for j, name in enumerate(names)
    }
    cov = np.cov(joint, rowvar=False) if joint.shape[0] > 1 else np.zeros((joint.shape[1],) * 2)
    summary = {
        "scenario": samples.scenario,
        "n_draws": samples.size,
        "n_retained": int(t1.shape[0]),
        "failure_rate": samples.failure_rate,
        "mean": {name: float(joint[:, j].mean()) for j, name in enumerate(names)},
        "quantiles": quantiles,
        "covariance": [[float(v) for v in row] for row in np.atleast_2d(cov)],
    }
    summary.update(extra)
    return summary


def _optimizer_override(params):
    """OptimizerConfig from the run file's "optimizer" object, if any."""
    payload = params.get("_extras", {}).get("optimizer")
    if payload is None:
        return None
    if not isinstance(payload, dict):
        raise ValidationError('config "optimizer" must be a JSON object')
    try:
        return OptimizerConfig(**payload)
    except TypeError as exc:
        raise ValidationError(f"bad optimizer settings: {exc}") from None


def cmd_fit(args) -> int:
    params = _merge_config(args)
    model_id = _require(params, "model")
    method = _require(params, "method")
    seed = params.get("seed") or 0
    n_draws = params.get("n_draws") or 1000
    workers = resolve_workers(params.get("workers"), default=os.cpu_count() or 1)
    out = _outdir(params)
    model = zoo.get_model(model_id, **_model_kwargs(model_id, params))
    data = _load_or_generate(model_id, params, seed)
    w0, v0 = _resolve_weights(params, model, data)
    opt_config = _optimizer_override(params)
    start = time.perf_counter()
    if method == "pbmi_s1":
        samples = pbmi_scenario1(model, data, n_draws, w0=w0, v0=v0,
                                 seed=seed, workers=workers, config=opt_config)
    elif method == "pbmi_s2":
        samples = pbmi_scenario2(model, data, n_draws, w0=w0, v0=v0,
                                 seed=seed, workers=workers, config=opt_config)
    elif method == "cut_bayes_exact":
        samples = cut_exact_gaussian(model, data, n_draws, seed=seed)
    elif method == "cut_bayes_mcmc":
        samples = cut_nested_metropolis(model, data,
                                        NestedMcmcConfig(outer_draws=n_draws),
                                        seed=seed)
    elif method == "full_bayes":
        samples = full_gaussian_bayes(model, data, n_draws, seed=seed)
    else:
        samples = full_posterior_bootstrap(model, data, n_draws, w0=w0, v0=v0,
                                           seed=seed, config=opt_config)
    wall = time.perf_counter() - start

    def weight_value(w):
        arr = np.asarray(w, dtype=float)
        return float(arr) if arr.ndim == 0 else [float(v) for v in arr]

    samples_path = os.path.join(out, "samples.csv")
    samples.to_csv(samples_path)
    samples.write_manifest(os.path.join(out, "manifest.json"))
    summary = _summarize(samples, {
        "model_id": model_id,
        "method": method,
        "seed": int(seed),
        "workers": int(workers),
        "w0": weight_value(w0),
        "v0": weight_value(v0),
        "wall_time_s": wall,
    })
    write_json(summary, os.path.join(out, "summary.json"))
    print(samples_path)
    return 0


def cmd_asymptotics(args) -> int:
    params = _merge_config(args)
    model_id = _require(params, "model")
    seed = params.get("seed") or 0
    method = params.get("method")
    out = _outdir(params)
    model = zoo.get_model(model_id, **_model_kwargs(model_id, params))
    data = _load_or_generate(model_id, params, seed)
    if method == "pbmi_s2" and not data.paired:
        raise ValidationError(
            "paired-scenario asymptotics requested for unpaired data"
        )
    mle = fit_mle(model, data)
    at = ParameterSplit(mle.theta1_hat, mle.theta2_hat)
    info = estimate_info(model, data, at)
    report = build_covariance_report(info)
    sigma_pb = report.sigma_s2 if method == "pbmi_s2" else report.sigma_s1
    risk = prediction_risk_traces(model, data, at, report.sigma_B, sigma_pb)
    w0, v0 = calibrate_prior_weights(info, model.module1.prior_factorizes,
                                     model.module2.prior_factorizes)

    def weight_value(w):
        arr = np.asarray(w, dtype=float)
        return float(arr) if arr.ndim == 0 else [float(v) for v in arr]

    payload = {
        "model_id": model_id,
        "method": method or "pbmi_s1",
        "n1": data.n1,
        "n2": data.n2,
        "theta1_hat": [float(v) for v in mle.theta1_hat],
        "theta2_hat": [float(v) for v in mle.theta2_hat],
        "report": report.to_json_dict(),
        "calibrated_w0": weight_value(w0),
        "calibrated_v0": weight_value(v0),
        "prediction_risk": risk.to_json_dict(),
    }
    path = os.path.join(out, "covariance.json")
    write_json(payload, path)
    print(path)
    return 0


def _parse_int_list(raw, default):
    if raw is None:
        return default
    if isinstance(raw, (list, tuple)):
        return tuple(int(v) for v in raw)
    return tuple(int(tok) for tok in str(raw).split(",") if tok.strip())


def cmd_evaluate(args) -> int:
    params = _merge_config(args)
    kind = _require(params, "kind")
    seed = params.get("seed") or 0
    out = _outdir(params)
    if kind == "coverage":
        model_id = _require(params, "model")
        knobs = _generator_knobs(model_id, params)
        knobs.pop("n", None)
        n_grid = _parse_int_list(params.get("n"), (2000,))
        methods_raw = params.get("methods")
        if methods_raw is None:
            paired_models = ("toy", "causal", "epi")
            methods = (["pbmi_s1", "pbmi_s2", "cut_bayes"]
                       if model_id in paired_models else ["pbmi_s1", "cut_bayes"])
        else:
            methods = [tok.strip() for tok in str(methods_raw).split(",") if tok.strip()]
        w0, _ = _parse_prior_weight(params.get("w0"), default=1.0)
        v0, _ = _parse_prior_weight(params.get("v0"), default=1.0)
        rows = []
        for method in methods:
            config = CoverageExperimentConfig(
                model_id=model_id,
                n_grid=n_grid,
                replicates=params.get("replicates") or 100,
                nominal=params.get("nominal") or 0.95,
                method=method,
                target=params.get("target") or "theta2",
                n_draws=params.get("n_draws") or 600,
                seed=seed,
                w0=w0, v0=v0,
                generator_knobs=knobs,
            )
            rows.extend(coverage_experiment(config))
        path = os.path.join(out, "coverage.csv")
        coverage_rows_to_csv(rows, path)
        for row in rows:
            print(f"n={row.n} method={row.method} coverage={row.coverage:.3f} "
                  f"(se {row.mc_se:.3f}, {row.replicates_used} replicates)")
        print(path)
        return 0
    if kind == "hdr":
        input_path = _require(params, "input")
        samples = SampleSet.read_csv(input_path)
        joint = samples.joint()
        if joint.shape[1] != 2:
            raise ValidationError(
                "hdr needs exactly two parameter columns; got "
                f"{joint.shape[1]} (d1 + d2)"
            )
        grid = hdr_region(joint, mass=params.get("mass") or 0.95)
        path = os.path.join(out, "hdr.json")
        write_json(grid.to_json_dict(), path)
        print(path)
        return 0
    if kind == "elpd-compare":
        n2_values = _parse_int_list(params.get("n2"), (100, 1000))
        rows = elpd_comparison(n2_values=n2_values,
                               replicates=params.get("replicates") or 50,
                               seed=seed)
        path = os.path.join(out, "elpd.csv")
        elpd_rows_to_csv(rows, path)
        for (n2, method), med in sorted(elpd_medians(rows).items()):
            print(f"n2={n2} method={method} median_elpd={med:.4f}")
        print(path)
        return 0
    if kind == "ks":
        a = SampleSet.read_csv(_require(params, "input"))
        b = SampleSet.read_csv(_require(params, "input2"))
        column = params.get("column") or "theta2_1"
        def pick(s, col):
            block, idx = col.rsplit("_", 1)
            j = int(idx) - 1
            arr = s.retained()[0] if block == "theta1" else s.retained()[1]
            if j >= arr.shape[1]:
                raise ValidationError(f"column {col} out of range")
            return arr[:, j]
        stat = ks_dissimilarity(pick(a, column), pick(b, column))
        payload = {"column": column, "ks": stat}
        path = os.path.join(out, "ks.json")
        write_json(payload, path)
        print(f"ks[{column}] = {stat:.6f}")
        print(path)
        return 0
    raise ValidationError(f"unknown evaluate kind {kind!r}")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SamplingFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
