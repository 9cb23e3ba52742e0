"""Unsat-core driven explanation and adversarial analysis for random forests.

The package answers three questions about a trained forest classifier:
which feature values force an individual prediction (minimal unsatisfiable
cores over an exact box-reachability solver), how much each feature matters
for a class globally (core-driven Shapley values), and how little a sample
must move to be classified differently (core-guided adversarial search with
randomized gradient-free refinement), including human-readable improvement
advice.
"""

from .exceptions import (
    DirectionError,
    ModelFormatError,
    NoCandidateError,
    NoCoreError,
    NoRegionError,
    OracleTooLargeError,
)
from .forest_model import (
    Dataset,
    FeatureStats,
    Forest,
    Node,
    Tree,
    feature_stats,
    load_model,
    predict,
    predict_batch,
    save_model,
)
from .m_shapley import (
    ImportanceVector,
    MucTable,
    imputation_eval,
    m_shapley,
    shapley_weight,
    worth,
)
from .muc_attack import (
    AttackConfig,
    AttackResult,
    attack,
    expand_adversarial_region,
    fine_grained_binary_search,
    is_adversarial,
    mean_l2_distance,
    select_initial_direction,
    zero_order_optimize,
)
from .muc_core import (
    AssumptionSet,
    Explanation,
    explain_dataset,
    extract_muc,
    feature_utilization,
    local_explanation,
)
from .reach_solver import (
    Box,
    SatResult,
    Target,
    decide_reachable,
    enumerate_cells,
    oracle_selftest,
)
from .report_cli import (
    Recommendation,
    apply_recommendations,
    apply_report,
    emit_plot_data,
    generate_report,
    recommendations,
)
from .trainer import TrainParams, evaluate_accuracy, train_forest

__version__ = "0.1.0"

__all__ = [
    "AssumptionSet",
    "AttackConfig",
    "AttackResult",
    "Box",
    "Dataset",
    "DirectionError",
    "Explanation",
    "FeatureStats",
    "Forest",
    "ImportanceVector",
    "ModelFormatError",
    "MucTable",
    "NoCandidateError",
    "NoCoreError",
    "NoRegionError",
    "Node",
    "OracleTooLargeError",
    "Recommendation",
    "SatResult",
    "Target",
    "TrainParams",
    "Tree",
    "apply_recommendations",
    "apply_report",
    "attack",
    "decide_reachable",
    "emit_plot_data",
    "enumerate_cells",
    "evaluate_accuracy",
    "expand_adversarial_region",
    "explain_dataset",
    "extract_muc",
    "feature_stats",
    "feature_utilization",
    "fine_grained_binary_search",
    "generate_report",
    "imputation_eval",
    "is_adversarial",
    "load_model",
    "local_explanation",
    "m_shapley",
    "mean_l2_distance",
    "oracle_selftest",
    "predict",
    "predict_batch",
    "recommendations",
    "save_model",
    "select_initial_direction",
    "shapley_weight",
    "train_forest",
    "worth",
    "zero_order_optimize",
]
