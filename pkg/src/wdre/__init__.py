"""Robust sparse density-ratio estimation under heavy contamination.

Estimates the ratio of a reference density to a target density as a sparse
log-linear model in pairwise quadratic features, either plainly or with a
strictly positive weight that makes the fit insensitive to far-away
outliers and keeps the weighted ratio bounded. Includes a contaminated
Gaussian data generator, assumption audits, and a reproducible Monte-Carlo
harness for support-recovery experiments.
"""

from .datagen import (
    ContaminationSpec,
    GaussianSpec,
    LabeledDataset,
    contaminate,
    make_sparse_difference,
    read_dataset_csv,
    sample_gaussian,
    write_dataset_csv,
)
from .diagnostics import (
    AssumptionReport,
    LeverageReport,
    SupportMetrics,
    ThetaBox,
    assumption_audit,
    leverage_stats,
    support_metrics,
)
from .experiments import (
    CellKey,
    CellResult,
    ExperimentConfig,
    GridResult,
    betamin_check,
    cells_of,
    run_cell,
    run_grid,
)
from .features import (
    FeatureMap,
    ParamVector,
    feature_dim,
    feature_eval,
    feature_matrix,
    matrix_from_theta,
    theta_from_matrix,
)
from .model import (
    DegenerateWeightError,
    ObjectiveSpec,
    PrecomputedFeatures,
    fisher_info,
    gradient,
    hessian,
    log_normalizing_term,
    normalizing_term,
    objective,
    precompute,
)
from .optim import (
    FitResult,
    SolverConfig,
    fit,
    kkt_residuals,
    lambda_schedule,
    soft_threshold,
)
from .weights import WeightConfig, WeightFn, log_weight_eval, log_weights, weight_eval

__version__ = "0.1.0"
