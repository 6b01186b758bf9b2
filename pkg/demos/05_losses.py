"""The loss stack: weighted classification + focal + dice, summed per stage.

Supervision is per class: each class token gets a classification target (its
own class when present in the image, the "absent" slot otherwise) and, when
present, a binary target mask.  Mask logits are bilinearly upsampled to label
resolution before the mask losses.

    python3 demos/05_losses.py
"""

import math

import numpy as np

from attnseg.losses import (
    BatchTargets,
    LossWeights,
    SegTarget,
    cls_loss,
    dice_loss,
    focal_loss,
    total_loss,
)
from attnseg.tensor import Tensor, sigmoid

# A 4x4 map with classes 0 and 2 present, one ignored pixel (255).
label_map = np.array(
    [
        [0, 0, 2, 2],
        [0, 0, 2, 2],
        [0, 0, 2, 2],
        [0, 0, 255, 2],
    ],
    dtype=np.uint8,
)
target = SegTarget(label_map, classes=3)
print("present classes:", sorted(target.present_classes()))
print("valid pixels:", int(target.valid.sum()), "of", label_map.size)

batch = BatchTargets.from_label_maps(label_map[None], 3, dtype=np.float64)
print("positives per class:", batch.positives.sum(axis=-1)[0])

# --- the three terms on random logits ------------------------------------
rng = np.random.default_rng(0)
# 3 class tokens with 3+1 logit slots, and 3 masks over 16 pixels
class_logits = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
mask_logits = Tensor(rng.normal(size=(1, 3, 16)), requires_grad=True)

print("\ncls  ", f"{cls_loss(class_logits, batch).item():.4f}",
      " (weighted cross-entropy; absent class 1 supervised at weight 0.1)")
print("focal", f"{focal_loss(mask_logits, batch).item():.4f}",
      " (binary, down-weights easy pixels)")
print("dice ", f"{dice_loss(sigmoid(mask_logits), batch).item():.4f}",
      " (overlap-based, scale-free)")

total, breakdown = total_loss([(class_logits, mask_logits)], batch, LossWeights())
print("total", f"{total.item():.4f}",
      f" = cls + 20*focal + 1*dice  -> {breakdown}")

# --- closed forms the tests pin ------------------------------------------
# One positive pixel at logit 0 (p = 1/2): alpha*(1-p)^gamma*ln 2.
lone = BatchTargets(
    positives=np.ones((1, 1, 1)), valid=np.ones((1, 1, 1)),
    class_index=np.zeros((1, 1), dtype=np.int64),
    class_weight=np.ones((1, 1)), classes=1,
)
print("\nfocal, lone positive pixel:",
      f"{focal_loss(Tensor(np.zeros((1, 1, 1))), lone).item():.10f}",
      f"= 0.25 * 0.25 * ln 2 = {0.25 * 0.25 * math.log(2):.10f}")

# Dice on perfect probabilities is exactly zero (the +1 smoothing cancels).
print("dice, perfect prediction:",
      dice_loss(Tensor(batch.positives.copy()), batch).item())

# Everything is differentiable; one backward pass fills the gradients.
total.backward()
print("\ngrad shapes:", class_logits.grad.shape, mask_logits.grad.shape)
print("mask-logit gradient mean magnitude:", f"{np.abs(mask_logits.grad).mean():.4f}")
