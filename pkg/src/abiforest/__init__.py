"""Isolation forest anomaly detection with attention-weighted path lengths."""

from abiforest.data import (
    Dataset,
    DataFormatError,
    SplitSpec,
    gen_circle,
    gen_normal,
    load_csv,
    split,
    subsample_classes,
)
from abiforest.forest import (
    IsolationForest,
    IsolationTree,
    anomaly_score,
    build_forest,
    build_tree,
    c_factor,
    classify,
    harmonic,
    mean_path_length,
    path_length,
)
from abiforest.attention import (
    AttentionModel,
    TreeResponse,
    abif_score,
    attended_path_length,
    attention_weights,
    explain,
    softmax_weights,
    tree_responses,
)
from abiforest.training import (
    ConvergenceError,
    FitConfig,
    TrainingProblem,
    assemble_problem,
    fit,
    gamma_from_tau,
    hinge_objective,
    pseudo_labels,
    solve,
)
from abiforest.evaluation import ModelConfig, f1_score, grid_search, repeated_eval, size_study

__version__ = "0.1.0"

__all__ = [
    "AttentionModel",
    "ConvergenceError",
    "DataFormatError",
    "Dataset",
    "FitConfig",
    "IsolationForest",
    "IsolationTree",
    "ModelConfig",
    "SplitSpec",
    "TrainingProblem",
    "TreeResponse",
    "abif_score",
    "anomaly_score",
    "assemble_problem",
    "attended_path_length",
    "attention_weights",
    "build_forest",
    "build_tree",
    "c_factor",
    "classify",
    "explain",
    "f1_score",
    "fit",
    "gamma_from_tau",
    "gen_circle",
    "gen_normal",
    "grid_search",
    "harmonic",
    "hinge_objective",
    "load_csv",
    "mean_path_length",
    "path_length",
    "pseudo_labels",
    "repeated_eval",
    "size_study",
    "softmax_weights",
    "solve",
    "split",
    "subsample_classes",
    "tree_responses",
]
