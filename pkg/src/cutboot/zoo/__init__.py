"""Built-in models, their synthetic data generators, and CSV round-trips."""
from __future__ import annotations

import numpy as np

from ..core import CutDataset, CutModel, ParameterSplit, ValidationError
from .biased import biased_generate, biased_model, biased_pseudo_true
from .causal import (
    causal_generate,
    causal_load_csv,
    causal_model,
    causal_pseudo_true,
    causal_write_csv,
    validate_causal_data,
)
from .counterexample import (
    counterexample_generate,
    counterexample_model,
    counterexample_population_info,
    counterexample_population_risk_matrices,
    counterexample_pseudo_true,
)
from .epi import (
    epi_default_generate,
    epi_generate,
    epi_load_csv,
    epi_model,
    epi_pseudo_true,
    epi_write_csv,
)
from .toy import (
    toy_generate,
    toy_model,
    toy_population_info,
    toy_pseudo_true,
)

_FMT = "%.17g"

MODEL_IDS = ("toy", "biased", "causal", "epi", "counterexample")

_MODEL_FACTORY_KEYS = {
    "toy": (),
    "biased": ("model_variances",),
    "causal": ("p",),
    "epi": ("groups", "log_offset"),
    "counterexample": (),
}


def get_model(model_id: str, **kwargs) -> CutModel:
    """Build a zoo model by id; kwargs go to the model factory."""
    factories = {
        "toy": toy_model,
        "biased": biased_model,
        "causal": causal_model,
        "epi": epi_model,
        "counterexample": counterexample_model,
    }
    if model_id not in factories:
        raise ValidationError(f"unknown model {model_id!r}; choose from {MODEL_IDS}")
    allowed = _MODEL_FACTORY_KEYS[model_id]
    unknown = set(kwargs) - set(allowed)
    if unknown:
        raise ValidationError(f"model {model_id!r} does not take {sorted(unknown)}")
    return factories[model_id](**kwargs)


def generate(model_id: str, seed: int = 0, **knobs) -> CutDataset:
    """Draw a synthetic dataset for a zoo model.

    Knobs by model: toy(n, rho, sigma2); biased(n1, n2, sigma1_sq,
    sigma2_sq); causal(n, confounding, p, treatment_effect, zero_inflation,
    noise_sd); epi(groups, theta2, overdispersion, log_offset);
    counterexample(n, sigma).
    """
    if model_id == "toy":
        return toy_generate(n=knobs.pop("n", 800), rho=knobs.pop("rho", 0.0),
                            sigma2=knobs.pop("sigma2", 1.0), seed=seed, **knobs)
    if model_id == "biased":
        if "n" in knobs:  # single-size convention: n2 = n, n1 = n / 10
            n = int(knobs.pop("n"))
            knobs.setdefault("n2", n)
            knobs.setdefault("n1", max(2, n // 10))
        return biased_generate(n1=knobs.pop("n1", 100), n2=knobs.pop("n2", 1000),
                               sigma1_sq=knobs.pop("sigma1_sq", 1.0),
                               sigma2_sq=knobs.pop("sigma2_sq", 1.0),
                               seed=seed, **knobs)
    if model_id == "causal":
        return causal_generate(n=knobs.pop("n", 2000), seed=seed, **knobs)
    if model_id == "epi":
        if "n" in knobs:
            raise ValidationError(
                "the epi generator sizes its groups internally; pass groups=..."
            )
        return epi_default_generate(seed=seed, **knobs)
    if model_id == "counterexample":
        return counterexample_generate(n=knobs.pop("n", 1000),
                                       sigma=knobs.pop("sigma", 1.0),
                                       seed=seed, **knobs)
    raise ValidationError(f"unknown model {model_id!r}; choose from {MODEL_IDS}")


def pseudo_true(model_id: str, **knobs) -> ParameterSplit:
    """Pseudo-true parameter values under each model's default generator."""
    if model_id == "toy":
        return toy_pseudo_true()
    if model_id == "biased":
        return biased_pseudo_true()
    if model_id == "causal":
        return causal_pseudo_true(
            treatment_effect=knobs.get("treatment_effect", 1.0),
            p=knobs.get("p", 3))
    if model_id == "epi":
        return epi_pseudo_true(theta2=knobs.get("theta2", (-3.0, 2.5)),
                               groups=knobs.get("groups", 13))
    if model_id == "counterexample":
        return counterexample_pseudo_true()
    raise ValidationError(f"unknown model {model_id!r}; choose from {MODEL_IDS}")


def write_dataset_csv(model_id: str, data: CutDataset, path) -> None:
    """Write a dataset in the model's documented CSV schema."""
    if model_id == "toy":
        with open(path, "w") as fh:
            fh.write("z,x,y\n")
            for i in range(data.n1):
                fh.write(",".join(_FMT % v for v in
                                  (data.data1[i], data.data2[i, 0], data.data2[i, 1])) + "\n")
    elif model_id == "biased":
        with open(path, "w") as fh:
            fh.write("module,value\n")
            for v in np.asarray(data.data1, dtype=float).reshape(-1):
                fh.write("1," + _FMT % v + "\n")
            for v in np.asarray(data.data2, dtype=float).reshape(-1):
                fh.write("2," + _FMT % v + "\n")
    elif model_id == "counterexample":
        with open(path, "w") as fh:
            fh.write("module,v1,v2\n")
            for v in np.asarray(data.data1, dtype=float).reshape(-1):
                fh.write("1," + _FMT % v + ",\n")
            for row in np.atleast_2d(data.data2):
                fh.write("2," + _FMT % row[0] + "," + _FMT % row[1] + "\n")
    elif model_id == "causal":
        causal_write_csv(data, path)
    elif model_id == "epi":
        epi_write_csv(data, path)
    else:
        raise ValidationError(f"unknown model {model_id!r}; choose from {MODEL_IDS}")


def load_dataset_csv(model_id: str, path) -> CutDataset:
    """Read a dataset written by ``write_dataset_csv``."""
    if model_id == "toy":
        raw = np.genfromtxt(path, delimiter=",", names=True)
        names = list(raw.dtype.names)
        if names != ["z", "x", "y"]:
            raise ValidationError(f"expected columns z,x,y; found {names}")
        z = np.atleast_1d(raw["z"]).astype(float)
        d2 = np.column_stack([np.atleast_1d(raw["x"]), np.atleast_1d(raw["y"])]).astype(float)
        return CutDataset(data1=z, data2=d2, paired=True)
    if model_id == "biased":
        raw = np.genfromtxt(path, delimiter=",", names=True)
        if list(raw.dtype.names) != ["module", "value"]:
            raise ValidationError("expected columns module,value")
        module = np.atleast_1d(raw["module"]).astype(int)
        value = np.atleast_1d(raw["value"]).astype(float)
        return CutDataset(data1=value[module == 1], data2=value[module == 2],
                          paired=False)
    if model_id == "counterexample":
        raw = np.genfromtxt(path, delimiter=",", names=True)
        if list(raw.dtype.names) != ["module", "v1", "v2"]:
            raise ValidationError("expected columns module,v1,v2")
        module = np.atleast_1d(raw["module"]).astype(int)
        v1 = np.atleast_1d(raw["v1"]).astype(float)
        v2 = np.atleast_1d(raw["v2"]).astype(float)
        return CutDataset(data1=v1[module == 1],
                          data2=np.column_stack([v1[module == 2], v2[module == 2]]),
                          paired=False)
    if model_id == "causal":
        return causal_load_csv(path)
    if model_id == "epi":
        return epi_load_csv(path)
    raise ValidationError(f"unknown model {model_id!r}; choose from {MODEL_IDS}")
