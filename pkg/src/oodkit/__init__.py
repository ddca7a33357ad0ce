"""oodkit: training-time OOD detection via jigsaw fake outliers and
textual anchor guidance, with a post-hoc scoring and evaluation harness."""

from .anchors import AnchorSet, cosine_sim, load_anchors, save_anchors, synth_anchors
from .autodiff import Tape, Tensor, backward
from .data import (Dataset, ImageGrid, LabeledSample, ToyConfig, load_dataset,
                   make_toy_benchmark, save_dataset)
from .jigsaw import generate_fake_set, jigsaw_transform
from .losses import BatchView, LossWeights, ce_loss, ci_loss, sc_loss, total_loss
from .metrics import ScoreReport, auroc, evaluate_benchmark, fpr_at_tpr
from .model import ModelDims, OodClassifier, load_checkpoint, save_checkpoint
from .scores import IdStats, ScoreParams, compute_scores, fit_id_stats
from .train import TrainConfig, fit, lr_at, make_batches, sgd_step

__version__ = "0.1.0"

__all__ = [
    "AnchorSet", "BatchView", "Dataset", "IdStats", "ImageGrid", "LabeledSample",
    "LossWeights", "ModelDims", "OodClassifier", "ScoreParams", "ScoreReport",
    "Tape", "Tensor", "ToyConfig", "TrainConfig", "auroc", "backward", "ce_loss",
    "ci_loss", "compute_scores", "cosine_sim", "evaluate_benchmark", "fit",
    "fit_id_stats", "fpr_at_tpr", "generate_fake_set", "jigsaw_transform",
    "load_anchors", "load_checkpoint", "load_dataset", "lr_at", "make_batches",
    "make_toy_benchmark", "save_anchors", "save_checkpoint", "save_dataset",
    "sc_loss", "sgd_step", "synth_anchors", "total_loss",
]
