"""Debiased high-dimensional regression calibration for log-contrast models
with mismeasured compositional covariates."""

__version__ = "0.1.0"

from ._errors import (
    DegenerateResidual,
    HdcalError,
    InsufficientReplicates,
    InvalidInput,
    NotConverged,
    ScenarioUnstable,
    SingularSystem,
)
from ._kernels import BACKEND
from .calibration import CalibratedDesign, build_design, calibrated_covariance, conditional_mean
from .composition import (
    CompositionMatrix,
    CountMatrix,
    LogContrastMatrix,
    ResponseVector,
    center,
    close,
    log_contrast,
)
from .covariance import (
    CovarianceEstimate,
    LogContrastNuisance,
    nodewise_covariance,
    psd_repair,
    shrinkage_covariance,
    to_logcontrast_nuisance,
)
from .error_model import ErrorModelParams, estimate_mu_x, estimate_sigma_u, simulate_contamination
from .inference import (
    CoefficientInference,
    DebiasedEstimate,
    coefficient_inference,
    debias,
    fit_debiased_lasso,
    fit_proposed,
    standard_errors,
)
from .lasso import (
    CvConfig,
    LassoProblem,
    LassoSolution,
    cocolasso_fit,
    cross_validate_lambda,
    lasso_fit,
    scaled_lasso,
)
from .montecarlo import SimulationScenario, SummaryTable, run_scenario
