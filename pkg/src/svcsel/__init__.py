"""Variable selection for Gaussian-process-based SVC models.

Penalized maximum likelihood with joint L1 shrinkage of fixed effects and
GP variances, shrinkage tuning by model-based optimization of a BIC
objective, plus a simulation harness and cross-validation engine.
"""

from .exceptions import (
    ConvergenceError,
    LineSearchError,
    NumericalError,
    SingularDesignError,
    SvcselError,
)
from .kernels import (
    GpParams,
    KernelSpec,
    aniso_distance,
    aniso_distance_matrix,
    correlation,
    correlation_derivative,
    covariance_matrix,
    covariance_matrix_range_derivative,
)
from .lasso import WhitenedProblem, gls, kkt_residual, weighted_lasso, whiten
from .mbo import (
    Surrogate,
    TuneConfig,
    TuneResult,
    expected_improvement,
    fit_surrogate,
    latin_hypercube,
    tune_shrinkage,
)
from .model import (
    Dataset,
    FitResult,
    PenaltyConfig,
    SvcParams,
    assemble_sigma_y,
    log_likelihood,
    neg_pll_theta,
    neg_pll_theta_gradient,
    penalized_log_likelihood,
)
from .optim import BoxBounds, OptimReport, Termination, minimize_box
from .pmle import (
    CdConfig,
    adaptive_weights,
    bic_value,
    count_nonzero,
    default_theta_bounds,
    fit_mle,
    fit_pmle,
)
from .predict import FoldPlan, fit_alasso_linear, kfold_cv, make_folds, predict, rmse
from .simstudy import (
    SelectionCounts,
    SimConfig,
    generate_dataset,
    in_sample_prediction,
    perturbed_grid,
    rme,
    run_study,
    sample_covariates,
    sample_gp,
    selection_counts,
)

__version__ = "0.1.0"

__all__ = [
    "BoxBounds", "CdConfig", "ConvergenceError", "Dataset", "FitResult",
    "FoldPlan", "GpParams", "KernelSpec", "LineSearchError", "NumericalError",
    "OptimReport", "PenaltyConfig", "SelectionCounts", "SimConfig",
    "SingularDesignError", "Surrogate", "SvcParams", "SvcselError",
    "Termination", "TuneConfig", "TuneResult", "WhitenedProblem",
    "adaptive_weights", "aniso_distance", "aniso_distance_matrix",
    "assemble_sigma_y", "bic_value", "correlation", "correlation_derivative",
    "count_nonzero", "covariance_matrix", "covariance_matrix_range_derivative",
    "default_theta_bounds", "expected_improvement", "fit_alasso_linear",
    "fit_mle", "fit_pmle", "fit_surrogate", "generate_dataset", "gls",
    "in_sample_prediction", "kfold_cv", "kkt_residual", "latin_hypercube",
    "log_likelihood", "make_folds", "minimize_box", "neg_pll_theta",
    "neg_pll_theta_gradient", "penalized_log_likelihood", "perturbed_grid",
    "predict", "rme", "rmse", "run_study", "sample_covariates", "sample_gp",
    "selection_counts", "tune_shrinkage", "weighted_lasso", "whiten",
]
