"""Benchmark of probability-target losses for learning from crowd annotations.

Nine losses (four of them Bregman divergences) share one registry with
closed-form gradients; a small numpy MLP trained with Adam compares them on
synthetic or file-based label distributions under macro F1, NDCG and a
rank-accuracy score.
"""

from .data import LabeledDataset, SynthConfig, generate_synthetic, load_dataset, save_dataset, split
from .divergences import (
    ALL_LOSSES,
    DEFAULT_CLIP,
    GENERATORS,
    ClipPolicy,
    LossId,
    batch_loss,
    bregman_from_phi,
    entropy,
    evaluate_loss,
    gradient_wrt_logits,
    gradient_wrt_prediction,
)
from .metrics import accuracy_ranking_decrease, convergence_delta, epochs_to_converge, macro_f1, ndcg
from .trainer import MlpParams, TrainConfig, TrainReport, evaluate, forward, train

__version__ = "0.1.0"

__all__ = [
    "ALL_LOSSES",
    "DEFAULT_CLIP",
    "GENERATORS",
    "ClipPolicy",
    "LabeledDataset",
    "LossId",
    "MlpParams",
    "SynthConfig",
    "TrainConfig",
    "TrainReport",
    "accuracy_ranking_decrease",
    "batch_loss",
    "bregman_from_phi",
    "convergence_delta",
    "entropy",
    "epochs_to_converge",
    "evaluate",
    "evaluate_loss",
    "forward",
    "generate_synthetic",
    "gradient_wrt_logits",
    "gradient_wrt_prediction",
    "load_dataset",
    "macro_f1",
    "ndcg",
    "save_dataset",
    "split",
    "train",
]
