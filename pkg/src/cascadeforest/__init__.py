"""Confidence-gated two-stage tree ensembles for binary anomaly detection.

A small coarse ensemble answers most queries on a short path; queries it is
not confident about route to one of two expert ensembles trained specifically
on the coarse model's low-confidence regions. The package bundles the
from-scratch learners (bagging, gradient boosting, AdaBoost), the gating
logic, an evaluation/benchmark harness, and a CLI.
"""

from .cascade import (
    CascadeConfig,
    CascadeModel,
    ClassificationResult,
    DegenerateExpert,
    Path,
    RoutingStats,
    SweepPoint,
    classify,
    classify_batch,
    find_lowest_beating_cct,
    grid_search,
    route_training_instance,
    sweep_cct,
    threshold_lattice,
    train_cascade,
)
from .data import (
    ANOMALY,
    NORMAL,
    BUILTIN_SPECS,
    Dataset,
    DatasetSpec,
    adapt_ccf,
    adapt_fc,
    adapt_kdd,
    dataset_to_csv,
    load_canonical_csv,
    load_csv,
    make_synthetic,
    subsample,
)
from .ensembles import (
    DistributionVector,
    EnsembleConfig,
    EnsembleModel,
    Method,
    fit_adaboost,
    fit_bagging,
    fit_ensemble,
    fit_gradient_boosting,
    model_size,
    predict_proba,
    predict_proba_batch,
)
from .errors import (
    CascadeForestError,
    ConfigError,
    DataError,
    InvalidInputError,
    TrainingError,
)
from .evaluation import (
    ConfusionCounts,
    EvalReport,
    F1Pair,
    FoldCache,
    evaluate_cascade_cv,
    evaluate_ensemble_cv,
    measure_latency,
    per_class_f1,
    stratified_kfold,
)
from .serialize import (
    cascade_from_bytes,
    cascade_from_json,
    cascade_to_bytes,
    cascade_to_json,
    ensemble_from_bytes,
    ensemble_from_json,
    ensemble_to_bytes,
    ensemble_to_json,
)
from .trees import TreeNode, fit_tree

__version__ = "0.1.0"
