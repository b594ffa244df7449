"""Posterior-bootstrap sampling and plug-in asymptotics for two-module cut models."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    CutbootError,
    CutDataset,
    CutModel,
    GaussianCutStructure,
    GroupedBinomialStructure,
    InfeasibleStartError,
    ModuleOneSpec,
    ModuleTwoSpec,
    NonConvergenceError,
    NumericalError,
    ParameterSplit,
    SamplingFailureError,
    ValidationError,
    check_gradients,
    weighted_objective_m1,
    weighted_objective_m2,
)
from .optimize import (  # noqa: F401
    MleEstimates,
    OptimizerConfig,
    fit_mle,
    maximize,
)
from .sampler import (  # noqa: F401
    SampleSet,
    draw_stream,
    exp_weights,
    pbmi_multigroup_stage1,
    pbmi_scenario1,
    pbmi_scenario2,
    resolve_workers,
)
from .asymptotics import (  # noqa: F401
    CovarianceReport,
    InfoMatrices,
    PredictionRiskTerms,
    build_covariance_report,
    calibrate_prior_weights,
    estimate_info,
    prediction_risk_from_matrices,
    prediction_risk_traces,
    sigma_cut_laplace,
    sigma_scenario1,
    sigma_scenario2,
)
from .baselines import (  # noqa: F401
    NestedMcmcConfig,
    cut_exact_gaussian,
    cut_nested_metropolis,
    full_gaussian_bayes,
    full_posterior_bootstrap,
)
from .evaluate import (  # noqa: F401
    CoverageExperimentConfig,
    CoverageRow,
    HdrGrid,
    coverage_experiment,
    elpd,
    elpd_comparison,
    elpd_loo,
    hdr_region,
    ks_dissimilarity,
)
from . import zoo  # noqa: F401
