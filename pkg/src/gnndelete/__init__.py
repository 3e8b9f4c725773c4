"""Graph unlearning with per-layer deletion operators on a frozen GCN link predictor."""

from .deletion import (
    LAST_LAYER,
    LAYER_WISE,
    DeletionOperator,
    UnlearnedModel,
    build_masks,
    del_forward,
    param_count,
    unlearned_embeddings,
)
from .graph import (
    IN,
    OUT,
    EdgeSplit,
    Graph,
    delete_edges,
    delete_nodes,
    khop_nodes,
    load_edge_list,
    negative_sample,
    sample_deletion,
    save_edge_list,
    split_edges,
)
from .metrics import EvalReport, auprc, auroc, eval_deleted, link_scores, mi_ratio, theorem1_check
from .model import GnnModel, NodeEmbeddings, TrainConfig, decode_edge, forward, train_base
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import (
    LossReport,
    UnlearnConfig,
    baseline_grad_ascent,
    baseline_noisy_finetune,
    baseline_retrain,
    sequential_unlearn,
    unlearn,
    unlearn_node_features,
)

__version__ = "0.1.0"

__all__ = [
    "LAST_LAYER", "LAYER_WISE", "DeletionOperator", "UnlearnedModel", "build_masks", "del_forward",
    "param_count", "unlearned_embeddings", "IN", "OUT", "EdgeSplit", "Graph", "delete_edges",
    "delete_nodes", "khop_nodes", "load_edge_list", "negative_sample", "sample_deletion",
    "save_edge_list", "split_edges", "EvalReport", "auprc", "auroc", "eval_deleted", "link_scores",
    "mi_ratio", "theorem1_check", "GnnModel", "NodeEmbeddings", "TrainConfig", "decode_edge",
    "forward", "train_base", "SyntheticSpec", "generate_synthetic", "LossReport", "UnlearnConfig",
    "baseline_grad_ascent", "baseline_noisy_finetune", "baseline_retrain", "sequential_unlearn",
    "unlearn", "unlearn_node_features",
]
