"""Training losses.

Per decoder stage the loss is

    cls + focal_weight * focal(cumulative mask logits)
        + dice_weight * dice(sigmoid(cumulative mask logits))

and the stage losses are summed.  Mask losses are computed against the
stage's cumulative (orderly summed) mask logits after upsampling to label
resolution, never against a single stage in isolation.

Class tokens are bound to classes one-to-one, so there is no matching step:
token c is supervised with class c when the class appears in the image and
with the no-object column otherwise, the latter down-weighted.

The public functions accept either a single image (``[N, H, W]`` logits with
a :class:`SegTarget` or a raw ``[H, W]`` label map) or a batch
(``[B, N, HW]`` logits with :class:`BatchTargets`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericsError, ShapeError
from .tensor import Tensor, log_sigmoid, log_softmax, sigmoid

__all__ = [
    "LossWeights",
    "SegTarget",
    "BatchTargets",
    "focal_loss",
    "dice_loss",
    "cls_loss",
    "total_loss",
    "IGNORE_LABEL",
]

IGNORE_LABEL = 255


@dataclass
class LossWeights:
    focal: float = 20.0
    dice: float = 1.0
    no_object: float = 0.1
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25


@dataclass
class SegTarget:
    """A label map plus its derived views.

    ``label_map`` holds class ids in [0, classes) or the ignore sentinel 255.
    Ignored pixels drop out of every loss term and metric.
    """

    label_map: np.ndarray
    classes: int
    ignore: int = IGNORE_LABEL

    def __post_init__(self):
        self.label_map = np.asarray(self.label_map)
        if self.label_map.ndim != 2:
            raise ShapeError(f"label map must be [H, W], got {self.label_map.shape}")
        if self.classes < 2:
            raise DataError(f"need at least 2 classes, got {self.classes}")
        bad = (self.label_map >= self.classes) & (self.label_map != self.ignore)
        if bad.any():
            offender = int(self.label_map[bad][0])
            raise DataError(
                f"label {offender} outside [0, {self.classes}) and not the ignore sentinel"
            )

    @property
    def valid(self):
        return self.label_map != self.ignore

    def binary_masks(self):
        """[classes, H, W] float64 one-hot planes; ignored pixels are zero everywhere."""
        masks = np.zeros((self.classes,) + self.label_map.shape, dtype=np.float64)
        valid = self.valid
        for c in range(self.classes):
            masks[c][valid & (self.label_map == c)] = 1.0
        return masks

    def present_classes(self):
        values = np.unique(self.label_map[self.valid])
        return set(int(v) for v in values)


@dataclass
class BatchTargets:
    """Dense per-batch arrays the vectorized losses consume.

    positives: [B, K, HW] one-hot, valid: [B, 1, HW], class_index: [B, K]
    (own class when present, else the no-object column K), class_weight:
    [B, K] (1 or the no-object weight).
    """

    positives: np.ndarray
    valid: np.ndarray
    class_index: np.ndarray
    class_weight: np.ndarray
    classes: int

    @classmethod
    def from_label_maps(cls, label_maps, classes, no_object_weight=0.1, dtype=np.float32):
        label_maps = np.asarray(label_maps)
        if label_maps.ndim == 2:
            label_maps = label_maps[None]
        if label_maps.ndim != 3:
            raise ShapeError(f"label maps must be [B, H, W], got {label_maps.shape}")
        targets = [SegTarget(lm, classes) for lm in label_maps]
        b = len(targets)
        hw = label_maps.shape[1] * label_maps.shape[2]
        positives = np.zeros((b, classes, hw), dtype=dtype)
        valid = np.zeros((b, 1, hw), dtype=dtype)
        class_index = np.full((b, classes), classes, dtype=np.int64)
        class_weight = np.full((b, classes), no_object_weight, dtype=dtype)
        for i, t in enumerate(targets):
            positives[i] = t.binary_masks().reshape(classes, hw)
            valid[i, 0] = t.valid.reshape(hw)
            for c in t.present_classes():
                class_index[i, c] = c
                class_weight[i, c] = 1.0
        return cls(positives, valid, class_index, class_weight, classes)

    @property
    def batch(self):
        return self.positives.shape[0]

    def valid_counts(self):
        return self.valid.sum(axis=(1, 2))


def _prepare(mask_tensor, target, no_object_weight=0.1):
    """Normalize inputs to a ``[B, N, HW]`` tensor and BatchTargets."""
    if isinstance(target, BatchTargets):
        tgt = target
        flat = mask_tensor
        if flat.ndim != 3 or flat.shape != tgt.positives.shape:
            raise ShapeError(
                f"mask values {mask_tensor.shape} do not match targets {tgt.positives.shape}"
            )
        return flat, tgt
    if isinstance(target, SegTarget):
        tgt = BatchTargets.from_label_maps(target.label_map[None], target.classes, no_object_weight)
    else:
        tgt = BatchTargets.from_label_maps(np.asarray(target)[None], mask_tensor.shape[0], no_object_weight)
    if mask_tensor.ndim != 3:
        raise ShapeError(f"expected [N, H, W] mask values, got {mask_tensor.shape}")
    n, h, w = mask_tensor.shape
    if (n, h * w) != tgt.positives.shape[1:]:
        raise ShapeError(
            f"mask values {mask_tensor.shape} do not match label map {target.label_map.shape if isinstance(target, SegTarget) else np.asarray(target).shape}"
        )
    return mask_tensor.reshape(1, n, h * w), tgt


def focal_loss(mask_logits, target, gamma=2.0, alpha=0.25):
    """Per-pixel binary focal loss, averaged over classes and valid pixels
    per image and then over the batch.

    With p the sigmoid of a logit and t the binary target, each pixel/class
    pair contributes -alpha_t * (1 - p_t)^gamma * log(p_t), where alpha_t is
    alpha on positives and 1 - alpha on negatives.  log(p_t) comes from the
    stable log-sigmoid, so saturated logits cost exactly zero instead of NaN.
    """
    logits, tgt = _prepare(mask_logits, target)
    b, n, hw = logits.shape

    pos = tgt.positives * tgt.valid
    neg = (1.0 - tgt.positives) * tgt.valid
    p = sigmoid(logits)
    log_p = log_sigmoid(logits)
    log_not_p = log_sigmoid(-logits)

    per_pair = -(
        alpha * Tensor(pos) * (1.0 - p) ** gamma * log_p
        + (1.0 - alpha) * Tensor(neg) * p**gamma * log_not_p
    )
    # Per-image mean over classes and valid pixels, then mean over images.
    norm = 1.0 / (b * n * np.maximum(tgt.valid_counts(), 1.0))
    weights = np.ascontiguousarray(
        np.broadcast_to(norm[:, None, None], (b, n, hw)), dtype=logits.dtype
    )
    return (per_pair * Tensor(weights)).sum()


def dice_loss(mask_probs, target, eps=1.0):
    """Soft dice loss: per image the mean over classes of
    1 - (2 * overlap + eps) / (pred_sum + target_sum + eps), then the mean
    over the batch.  Sums run over valid pixels only."""
    probs, tgt = _prepare(mask_probs, target)
    b, n, hw = probs.shape

    valid = Tensor(np.ascontiguousarray(np.broadcast_to(tgt.valid, (b, n, hw)), dtype=probs.dtype))
    t = tgt.positives * tgt.valid
    p = probs * valid
    overlap = (p * Tensor(t)).sum(axis=2)  # [B, N]
    pred_sum = p.sum(axis=2)
    target_sum = Tensor(t.sum(axis=2))
    per_class = 1.0 - (2.0 * overlap + eps) / (pred_sum + target_sum + eps)
    return per_class.sum() * (1.0 / (b * n))


def cls_loss(class_logits, target, no_object_weight=0.1):
    """Weighted cross-entropy over class tokens.

    Token c is labeled with class c when present in the image, otherwise with
    the no-object column; no-object terms are scaled by ``no_object_weight``.
    The sum is divided by the plain token count.
    """
    logits = class_logits
    if logits.ndim == 2:
        logits = logits.reshape(1, *class_logits.shape)
    if logits.ndim != 3:
        raise ShapeError(f"expected [B, N, K+1] class logits, got {class_logits.shape}")
    b, n, cols = logits.shape

    if isinstance(target, BatchTargets):
        tgt = target
    elif isinstance(target, SegTarget):
        tgt = BatchTargets.from_label_maps(target.label_map[None], target.classes, no_object_weight)
    else:
        tgt = BatchTargets.from_label_maps(np.asarray(target)[None], n, no_object_weight)
    if cols != tgt.classes + 1:
        raise ShapeError(f"class logits have {cols} columns, expected {tgt.classes + 1}")
    if tgt.class_index.shape != (b, n):
        raise ShapeError(f"targets {tgt.class_index.shape} do not match logits {logits.shape}")

    log_probs = log_softmax(logits, axis=-1)
    rows_b = np.repeat(np.arange(b), n)
    rows_n = np.tile(np.arange(n), b)
    picked = log_probs[rows_b, rows_n, tgt.class_index.reshape(-1)]  # [B*N]
    weights = tgt.class_weight.reshape(-1).astype(logits.dtype)
    return -(picked * Tensor(weights)).sum() * (1.0 / (b * n))


def total_loss(stage_outputs, target, weights: LossWeights | None = None):
    """Sum the per-stage losses.

    ``stage_outputs`` is a list of ``(class_logits, cumulative_mask_logits)``
    pairs, mask logits already upsampled to label resolution.  Returns the
    scalar total and a float breakdown; each term is checked for finiteness
    and named in the error if it diverged.
    """
    if weights is None:
        weights = LossWeights()
    if not stage_outputs:
        raise ShapeError("total_loss needs at least one stage")

    total = None
    breakdown = {"cls": 0.0, "focal": 0.0, "dice": 0.0}
    for class_logits, mask_logits in stage_outputs:
        terms = {
            "cls": cls_loss(class_logits, target, weights.no_object),
            "focal": focal_loss(mask_logits, target, weights.focal_gamma, weights.focal_alpha),
            "dice": dice_loss(sigmoid(mask_logits), target),
        }
        for name, value in terms.items():
            if not np.isfinite(value.data).all():
                raise NumericsError(f"{name} loss term is non-finite")
        stage_total = terms["cls"] + weights.focal * terms["focal"] + weights.dice * terms["dice"]
        total = stage_total if total is None else total + stage_total
        for name, value in terms.items():
            breakdown[name] += value.item()
    breakdown["total"] = total.item()
    return total, breakdown
