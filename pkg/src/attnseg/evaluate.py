"""Evaluation: confusion-matrix accumulation and mean IoU.

IoU is computed at dataset level: one confusion matrix accumulates over all
images, and per-class IoU is TP / (TP + FP + FN) on the accumulated counts.
Classes that never appear in either ground truth or prediction are excluded
from the mean rather than counted as zero.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError
from .losses import IGNORE_LABEL

__all__ = ["ConfusionMatrix", "miou", "format_report"]


class ConfusionMatrix:
    """Counts ``[gt, pred]`` pixels; rows are ground truth, columns prediction."""

    def __init__(self, classes, ignore=IGNORE_LABEL):
        if classes < 2:
            raise DataError(f"need at least 2 classes, got {classes}")
        self.classes = classes
        self.ignore = ignore
        self.counts = np.zeros((classes, classes), dtype=np.int64)

    def update(self, ground_truth, prediction):
        gt = np.asarray(ground_truth)
        pred = np.asarray(prediction)
        if gt.shape != pred.shape:
            raise ShapeError(f"ground truth {gt.shape} vs prediction {pred.shape}")
        valid = gt != self.ignore
        gt = gt[valid].astype(np.int64)
        pred = pred[valid].astype(np.int64)
        if gt.size and (gt.min() < 0 or gt.max() >= self.classes):
            raise DataError(f"ground-truth label outside [0, {self.classes})")
        if pred.size and (pred.min() < 0 or pred.max() >= self.classes):
            raise DataError(f"predicted label outside [0, {self.classes})")
        flat = np.bincount(gt * self.classes + pred, minlength=self.classes * self.classes)
        self.counts += flat.reshape(self.classes, self.classes)
        return self

    def merge(self, other):
        if other.classes != self.classes:
            raise ShapeError(f"cannot merge {other.classes}-class matrix into {self.classes}-class")
        self.counts += other.counts
        return self

    def __add__(self, other):
        out = ConfusionMatrix(self.classes, self.ignore)
        out.counts = self.counts + other.counts
        return out

    def iou(self):
        """Per-class IoU; NaN for classes absent from both sides."""
        tp = np.diag(self.counts).astype(np.float64)
        fp = self.counts.sum(axis=0) - tp
        fn = self.counts.sum(axis=1) - tp
        union = tp + fp + fn
        with np.errstate(invalid="ignore", divide="ignore"):
            values = np.where(union > 0, tp / union, np.nan)
        return values

    def mean_iou(self):
        values = self.iou()
        if np.all(np.isnan(values)):
            return float("nan")
        return float(np.nanmean(values))


def miou(predictions, ground_truths, classes, ignore=IGNORE_LABEL):
    """Dataset-level (per-class IoU, mean IoU) over parallel label-map lists."""
    cm = ConfusionMatrix(classes, ignore)
    preds = list(predictions)
    gts = list(ground_truths)
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    for pred, gt in zip(preds, gts):
        cm.update(gt, pred)
    return cm.iou(), cm.mean_iou()


def format_report(per_class, mean):
    lines = ["class  iou"]
    for c, value in enumerate(per_class):
        shown = "absent" if np.isnan(value) else f"{value:.4f}"
        lines.append(f"{c:<6d} {shown}")
    lines.append(f"mIoU   {mean:.4f}")
    return "\n".join(lines) + "\n"
