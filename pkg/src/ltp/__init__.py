"""Local Degree Profile / Local Topological Profile graph embeddings with a
Random Forest classifier and a cross-validation evaluation harness."""

__version__ = "0.1.0"

from .descriptors import (
    FEATURES,
    DescriptorMatrix,
    compute_descriptors,
    edge_betweenness,
    jaccard_index,
    ldp_node_features,
    local_degree_score,
    shortest_path_multiset,
)
from .embedding import EmbeddingConfig, aggregate, embed_dataset, embed_graph
from .evaluation import (
    CVReport,
    FoldPlan,
    ablation,
    average_rank,
    run_cv,
    stratified_kfold,
    sweep_single_hyperparameter,
)
from .forest import ForestConfig, RandomForest, gini_impurity
from .graph import Dataset, Graph, generate_synthetic, parse_tudataset, write_tudataset

__all__ = [
    "FEATURES",
    "CVReport",
    "Dataset",
    "DescriptorMatrix",
    "EmbeddingConfig",
    "FoldPlan",
    "ForestConfig",
    "Graph",
    "RandomForest",
    "ablation",
    "aggregate",
    "average_rank",
    "compute_descriptors",
    "edge_betweenness",
    "embed_dataset",
    "embed_graph",
    "generate_synthetic",
    "gini_impurity",
    "jaccard_index",
    "ldp_node_features",
    "local_degree_score",
    "parse_tudataset",
    "run_cv",
    "shortest_path_multiset",
    "stratified_kfold",
    "sweep_single_hyperparameter",
    "write_tudataset",
]
