"""Graph regression on tabular mixture records.

The package turns a table of concrete mixture designs into a k-nearest
neighbor graph, trains a mean-aggregating message-passing regressor on it
with a purpose-built reverse-mode autodiff engine, and benchmarks the result
against a from-scratch random forest.
"""

__version__ = "0.1.0"

from .dataset import (
    FEATURE_GROUPS,
    FeatureTable,
    Normalizer,
    RawDataset,
    SplitMasks,
    apply_feature_group,
    build_feature_table,
    fit_normalizer,
    get_group,
    load_csv,
    split,
)
from .errors import TabsageError
from .forest import (
    CvResult,
    Forest,
    ForestConfig,
    cross_validate,
    default_grid,
    fit_forest,
    importance,
    predict_forest,
)
from .knn import KnnGraph, build_knn_graph, ego_subgraph, neighbor_order, write_edge_list
from .metrics import MetricsReport, compute_metrics
from .sage import (
    ModelConfig,
    SageModel,
    forward_graph_level,
    forward_node_level,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .trainer import TrainConfig, TrainHistory, evaluate, predict, train

__all__ = [
    "FEATURE_GROUPS",
    "CvResult",
    "FeatureTable",
    "Forest",
    "ForestConfig",
    "KnnGraph",
    "MetricsReport",
    "ModelConfig",
    "Normalizer",
    "RawDataset",
    "SageModel",
    "SplitMasks",
    "TabsageError",
    "TrainConfig",
    "TrainHistory",
    "apply_feature_group",
    "build_feature_table",
    "build_knn_graph",
    "compute_metrics",
    "cross_validate",
    "default_grid",
    "ego_subgraph",
    "evaluate",
    "fit_forest",
    "fit_normalizer",
    "forward_graph_level",
    "forward_node_level",
    "get_group",
    "importance",
    "init_model",
    "load_checkpoint",
    "load_csv",
    "neighbor_order",
    "predict",
    "predict_forest",
    "save_checkpoint",
    "split",
    "train",
    "write_edge_list",
]
