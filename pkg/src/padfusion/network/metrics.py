"""Segmentation metrics from confusion matrices."""

from __future__ import annotations

import numpy as np

from .losses import IGNORE_LABEL

__all__ = ["confusion_matrix", "cohen_kappa", "segmentation_metrics", "pixel_accuracy"]


def confusion_matrix(pred, gt, num_classes: int) -> np.ndarray:
    """``cm[i, j]`` counts pixels with ground truth ``i`` predicted as ``j``."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    valid = gt != IGNORE_LABEL
    p = pred[valid].astype(np.int64)
    g = gt[valid].astype(np.int64)
    if p.size and (p.min() < 0 or p.max() >= num_classes or g.min() < 0 or g.max() >= num_classes):
        raise ValueError("labels outside the class range")
    return np.bincount(g * num_classes + p, minlength=num_classes**2).reshape(num_classes, num_classes)


def cohen_kappa(cm: np.ndarray) -> float:
    n = cm.sum()
    po = np.trace(cm) / n
    pe = float(np.dot(cm.sum(axis=0), cm.sum(axis=1))) / (n * n)
    if pe == 1.0:
        # a single class on both sides: perfect agreement carries no information
        return 1.0 if po == 1.0 else 0.0
    return float((po - pe) / (1.0 - pe))


def pixel_accuracy(pred, gt) -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    valid = gt != IGNORE_LABEL
    return float(np.mean(pred[valid] == gt[valid]))


def segmentation_metrics(pred_labels, gt_labels, num_classes: int) -> dict:
    """Pooled OA with IoU/F1 from one confusion matrix; Kappa per sample, then averaged.

    Classes that never occur in either predictions or ground truth are left
    out of mIoU and mF1 (their IoU is reported as None).
    """
    preds = [np.asarray(p) for p in pred_labels]
    gts = [np.asarray(g) for g in gt_labels]
    if not preds or len(preds) != len(gts):
        raise ValueError("evaluation set is empty or prediction/ground-truth counts differ")
    pooled = np.zeros((num_classes, num_classes), dtype=np.int64)
    kappas = []
    for p, g in zip(preds, gts):
        cm = confusion_matrix(p, g, num_classes)
        pooled += cm
        if cm.sum():
            kappas.append(cohen_kappa(cm))
    total = pooled.sum()
    if total == 0:
        raise ValueError("evaluation set has no labelled pixels")
    tp = np.diag(pooled).astype(np.float64)
    fp = pooled.sum(axis=0) - tp
    fn = pooled.sum(axis=1) - tp
    present = (tp + fp + fn) > 0
    iou = np.where(present, tp / np.maximum(tp + fp + fn, 1), np.nan)
    f1 = np.where(present, 2 * tp / np.maximum(2 * tp + fp + fn, 1), np.nan)
    return {
        "OA": float(tp.sum() / total),
        "mKappa": float(np.mean(kappas)),
        "mF1": float(np.nanmean(f1)),
        "mIoU": float(np.nanmean(iou)),
        "per_class_iou": [None if np.isnan(v) else float(v) for v in iou],
    }
