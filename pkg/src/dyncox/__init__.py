"""Time-varying degree and homophily curves for directed interaction events.

Events on ordered node pairs are modeled with a Cox-type intensity
``exp(alpha_i(t) + beta_j(t) + Z_ij(t)' gamma(t))``; the package estimates
the curves on a time grid, provides pointwise intervals and resampling tests,
and ships an exact simulator with the scenario presets used by the packaged
studies.
"""

__version__ = "0.1.0"

from .boottest import KINDS, TestReport, TestSpec, run_test, write_report
from .data import (
    CovariateSet,
    EventLog,
    NodeFeatureSet,
    build_pair_covariates,
    ingest_events,
    read_covariates,
    read_node_features,
    write_covariates,
    write_events,
)
from .errors import DyncoxError, NumericalError, ValidationError
from .fitting import (
    FitConfig,
    FitResult,
    PointFit,
    default_grid,
    default_h1,
    default_h2,
    fit_at_time,
    fit_grid,
    fit_homogeneous,
    write_curves_csv,
)
from .inference import (
    CIBundle,
    EtaVariance,
    GammaInference,
    StructuredSMatrix,
    confidence_intervals,
    eta_variance,
    gamma_inference,
    s_matrix,
    write_ci_csv,
)
from .simulate import (
    SCENARIOS,
    CurveFamily,
    ScenarioSpec,
    TruthBundle,
    envelope_rates,
    read_truth,
    scenario,
    simulate,
    write_truth,
)

__all__ = [
    "__version__",
    "KINDS",
    "SCENARIOS",
    "CIBundle",
    "CovariateSet",
    "CurveFamily",
    "DyncoxError",
    "EtaVariance",
    "EventLog",
    "FitConfig",
    "FitResult",
    "GammaInference",
    "NodeFeatureSet",
    "NumericalError",
    "PointFit",
    "ScenarioSpec",
    "StructuredSMatrix",
    "TestReport",
    "TestSpec",
    "TruthBundle",
    "ValidationError",
    "build_pair_covariates",
    "confidence_intervals",
    "default_grid",
    "default_h1",
    "default_h2",
    "envelope_rates",
    "eta_variance",
    "fit_at_time",
    "fit_grid",
    "fit_homogeneous",
    "gamma_inference",
    "ingest_events",
    "read_covariates",
    "read_node_features",
    "read_truth",
    "run_test",
    "s_matrix",
    "scenario",
    "simulate",
    "write_ci_csv",
    "write_covariates",
    "write_curves_csv",
    "write_events",
    "write_report",
    "write_truth",
]
