"""Isolation forest anomaly detection with optimal multi-fork trees.

The package grows locality-sensitive-hash isolation trees, cuts them
into fine clusters, and merges the clusters back under branching factors
drawn from laws whose mean sits at the isolation-efficiency optimum e.
"""

from .data import DataMatrix, Subsample, load_csv, minmax_scaled, subsample
from .errors import DataError, ModelFormatError
from .evaluation import EvalReport, MetricSummary, ablate, auc_pr, auc_roc, run_experiment
from .forest import (
    Forest,
    ForestConfig,
    average_path_length,
    fit,
    load_model,
    path_length,
    resolve_epsilon,
    save_model,
    score,
    score_all,
)
from .lsh_tree import (
    CentreNode,
    HashFunction,
    Leaf,
    LshNode,
    assign_depths,
    build_lsh_tree,
    iter_nodes,
    nodes_equal,
)
from .opt_tree import (
    Cluster,
    CutSet,
    best_merge,
    build_optimal_tree,
    distortion,
    epsilon_cut,
    merge_clusters,
    merged_centre,
)
from .theory import (
    BranchingDistribution,
    DistributionReport,
    efficiency_curve,
    efficiency_derivative,
    isolation_efficiency,
    optimal_branching,
    tail_bound,
    theory_report,
    validate_distribution,
)

__version__ = "0.1.0"

__all__ = [
    "BranchingDistribution",
    "CentreNode",
    "Cluster",
    "CutSet",
    "DataError",
    "DataMatrix",
    "DistributionReport",
    "EvalReport",
    "Forest",
    "ForestConfig",
    "HashFunction",
    "Leaf",
    "LshNode",
    "MetricSummary",
    "ModelFormatError",
    "Subsample",
    "ablate",
    "assign_depths",
    "auc_pr",
    "auc_roc",
    "average_path_length",
    "best_merge",
    "build_lsh_tree",
    "build_optimal_tree",
    "distortion",
    "efficiency_curve",
    "efficiency_derivative",
    "epsilon_cut",
    "fit",
    "isolation_efficiency",
    "iter_nodes",
    "load_csv",
    "load_model",
    "merge_clusters",
    "merged_centre",
    "minmax_scaled",
    "nodes_equal",
    "optimal_branching",
    "path_length",
    "resolve_epsilon",
    "run_experiment",
    "save_model",
    "score",
    "score_all",
    "subsample",
    "tail_bound",
    "theory_report",
    "validate_distribution",
    "__version__",
]
