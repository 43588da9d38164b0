"""Smoothed GMM estimation of a structural quantile level jointly with model parameters.

When two or more choices satisfy a conditional quantile restriction at
the same unknown level tau, stacking their instrumented moment
conditions identifies tau together with the structural coefficients.
The indicator inside the moments is replaced by a smooth fourth-order
kernel CDF so the objective is differentiable.
"""

from .errors import (
    ConditioningError,
    DimensionError,
    DomainError,
    EstimationError,
    HarnessError,
    IdentificationError,
    InferenceError,
    InsufficientDataError,
    NonFiniteObjectiveError,
    ParameterError,
    QGMMError,
)
from .kernel import SmoothingKernel, kernel_moment, smooth_indicator, smooth_indicator_derivative
from .model import (
    ChoiceBlock,
    FunctionModel,
    LinearQuantileModel,
    ObservationSet,
    ParameterPoint,
    StructuralModel,
    moment_jacobian,
    smoothed_moments,
    unsmoothed_moments,
)
from .weighting import covariance_hac, covariance_iid, efficient_weight, estimate_covariance
from .optimizer import AnnealConfig, Bounds, anneal, gmm_objective, minimize, polish
from .bandwidth import fixed_bandwidth, plugin_bandwidth
from .estimator import (
    BootstrapResult,
    EstimateReport,
    asymptotic_covariance,
    bootstrap_inference,
    estimate,
    initial_estimate,
    one_step,
    two_step,
)
from .simulation import DGP1, DGP2, BiasRmseTable, generate, run_replications, true_parameters
from .euler import (
    ConsumptionPanel,
    PreferenceEstimates,
    estimate_preferences,
    euler_structural_model,
    synthetic_panel,
    to_preferences,
)

__version__ = "0.1.0"
