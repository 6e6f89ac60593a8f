"""Bayesian inference and learning of functions nested inside known dynamics.

The package combines a matrix-normal inverse-Wishart conjugate model over
basis-function weights with marginalized sequential Monte Carlo: an
auxiliary particle filter for online inference/learning and particle Gibbs
with ancestor sampling for offline smoothing and identification.
"""

from .basis import (
    HilbertBasisConfig,
    KernelSpec,
    StackedBasis,
    antisymmetric_basis,
    antisymmetric_indices,
    eigenvalues,
    eval_basis,
    hilbert_basis,
    prior_column_covariance,
    se_spectral_density,
)
from .conjugate import (
    MniwParams,
    StudentTParams,
    SuffStats,
    SuffStatsStack,
    WeightNoiseSample,
    as_stats,
    batch_update,
    forget,
    log_normalizer,
    params_from_stats,
    posterior_update,
    predictive,
    sample_mniw,
    sample_student_t,
    stats_from_params,
    trajectory_stats,
)
from .evaluation import FunctionGrid, function_grid, marginal_weight, rmse, wrmse
from .offline import (
    CsmcResult,
    PgasState,
    ReferenceTrajectory,
    ancestor_weights,
    csmc_sweep,
    pgas_run,
    suffix_decrement,
)
from .online import (
    FilterResult,
    OnlineConfig,
    ParticleEnsemble,
    PosteriorSummary,
    ess,
    init_ensemble,
    posterior_summary,
    resample_categorical,
    run_filter,
    step,
)
from .ssm import InitSpec, ModelSpec, forward_simulate, measurement_density, rk4_step, transition_density

__version__ = "0.1.0"

__all__ = [
    "HilbertBasisConfig", "KernelSpec", "StackedBasis", "antisymmetric_basis",
    "antisymmetric_indices", "eigenvalues", "eval_basis", "hilbert_basis",
    "prior_column_covariance", "se_spectral_density",
    "MniwParams", "StudentTParams", "SuffStats", "SuffStatsStack",
    "WeightNoiseSample", "as_stats", "batch_update", "forget", "log_normalizer",
    "params_from_stats", "posterior_update", "predictive", "sample_mniw",
    "sample_student_t", "stats_from_params", "trajectory_stats",
    "FunctionGrid", "function_grid", "marginal_weight", "rmse", "wrmse",
    "CsmcResult", "PgasState", "ReferenceTrajectory", "ancestor_weights",
    "csmc_sweep", "pgas_run", "suffix_decrement",
    "FilterResult", "OnlineConfig", "ParticleEnsemble", "PosteriorSummary",
    "ess", "init_ensemble", "posterior_summary", "resample_categorical",
    "run_filter", "step",
    "InitSpec", "ModelSpec", "forward_simulate", "measurement_density",
    "rk4_step", "transition_density",
    "__version__",
]
