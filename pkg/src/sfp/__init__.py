"""Supervised fuzzy partitioning: entropy-regularized, feature-weighted supervised clustering."""

__version__ = "0.1.0"

from .exceptions import DataError, DomainError, NumericError, SchemaError, SFPError
from .simplex import solve_entropic_linear_min, solve_rows
from .losses import LossKind, loss_eval, prototype_solve
from .model import Dataset, Hyperparams, ModelParams, SFPModel, load_model, objective, save_model
from .training import FitConfig, FitResult, bcd_iteration, fit, initialize
from .inference import (
    BatchPrediction,
    FeatureSelection,
    Prediction,
    distance_features,
    kernel_score,
    membership_of,
    predict,
    predict_batch,
    select_features,
)
from .data import PreprocessStats, RawTable, gen_synthetic, load_csv, preprocess, write_csv
from .evaluation import (
    MetricReport,
    ReparamPoint,
    compute_metrics,
    default_grid,
    grid_search,
    kfold_cv,
    reparam,
    select_point,
)
from .gme import GmeParams, certify_equivalence, em_step, gme_loglik, j_function

__all__ = [
    "__version__",
    "SFPError", "DomainError", "NumericError", "DataError", "SchemaError",
    "solve_entropic_linear_min", "solve_rows",
    "LossKind", "loss_eval", "prototype_solve",
    "Dataset", "Hyperparams", "ModelParams", "SFPModel", "load_model", "save_model", "objective",
    "FitConfig", "FitResult", "fit", "initialize", "bcd_iteration",
    "Prediction", "BatchPrediction", "FeatureSelection", "predict", "predict_batch",
    "membership_of", "kernel_score", "distance_features", "select_features",
    "RawTable", "PreprocessStats", "load_csv", "preprocess", "write_csv", "gen_synthetic",
    "ReparamPoint", "reparam", "default_grid", "kfold_cv", "grid_search", "select_point",
    "compute_metrics", "MetricReport",
    "GmeParams", "gme_loglik", "em_step", "j_function", "certify_equivalence",
]
