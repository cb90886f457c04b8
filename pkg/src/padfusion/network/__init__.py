"""Toy segmentation network with per-stage PAD fusion."""

from __future__ import annotations

from .data import Batch, SynthConfig, class_palette, collate, synth_dataset, to_pairs
from .losses import (
    IGNORE_LABEL,
    STAGE_ALPHAS,
    LossBreakdown,
    cross_entropy,
    loss_amp,
    loss_seg,
    loss_total,
)
from .metrics import cohen_kappa, confusion_matrix, pixel_accuracy, segmentation_metrics
from .model import FUSIONS, ModelConfig, ModelOutput, PadNet, conv3x3_s2, encoder_param_count, upsample_nearest
from .train import (
    Adam,
    TrainingAborted,
    TrainResult,
    compute_losses,
    evaluate,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)

metrics = segmentation_metrics

__all__ = [
    "Batch", "SynthConfig", "class_palette", "collate", "synth_dataset", "to_pairs",
    "IGNORE_LABEL", "STAGE_ALPHAS", "LossBreakdown", "cross_entropy", "loss_amp", "loss_seg", "loss_total",
    "cohen_kappa", "confusion_matrix", "pixel_accuracy", "segmentation_metrics", "metrics",
    "FUSIONS", "ModelConfig", "ModelOutput", "PadNet", "conv3x3_s2", "encoder_param_count", "upsample_nearest",
    "Adam", "TrainingAborted", "TrainResult", "compute_losses", "evaluate", "load_checkpoint", "predict",
    "save_checkpoint", "train",
]
