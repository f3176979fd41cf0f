"""Bilinear spline growth models with an estimated knot.

Fits linear-linear piecewise latent growth curves where the knot is
either a latent factor (random knot) or a single shared parameter
(fixed knot), with person-specific measurement occasions and baseline
covariates, by full-information maximum likelihood.  Includes the
transforms between the estimable and interpretable parameter spaces, a
simulation-design data generator, and a Monte Carlo harness computing
bias / SE / RMSE / coverage metrics.
"""

from .estimate import (
    BaselineParams,
    DegenerateData,
    EstimationError,
    FitOptions,
    FitResult,
    IdentificationError,
    NonPDCovariance,
    SingularInformation,
    diagnose_improper,
    diagnose_improper_psi,
    fit_baseline,
    fit_full,
    fit_reduced,
    information_criteria,
    initial_values,
    loglik_individual,
    loglik_total,
    param_names,
    standard_errors,
    wald_ci,
)
from .harness import (
    MetricsReport,
    ParamMetrics,
    RepOutcome,
    TooFewReps,
    metric_coverage,
    metric_empirical_se,
    metric_relative_bias,
    metric_relative_rmse,
    run_condition,
    run_replication,
    summarize_grid,
)
from .model import (
    GrowthFactors,
    LongitudinalDataset,
    OriginalParams,
    ReducedOriginal,
    ReducedParams,
    ReparamFactors,
    ReparamParams,
    loadings_full,
    loadings_reduced,
    model_moments_full,
    model_moments_reduced,
    predict_trajectory,
)
from .simulate import (
    InvalidCondition,
    NonPSDJoint,
    SimCondition,
    condition_to_params,
    gen_dataset,
    gen_schedule,
    joint_factor_tic_moments,
    sample_factors_tics,
)
from .transform import (
    from_reparam,
    from_reparam_cellwise,
    original_jacobian,
    original_mean,
    reduce_to_reparam,
    reduce_transform,
    reparam_jacobian,
    reparam_mean,
    to_reparam,
)

__version__ = "0.1.0"
