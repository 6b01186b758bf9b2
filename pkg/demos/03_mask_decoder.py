"""The mask decoder: one similarity map, two readouts.

Each decoder stage cross-attends learned class tokens against backbone
features.  The scaled query-key similarity S = QK^T / sqrt(d) is used twice:

  * softmax(S) over the feature axis routes the usual attention update that
    refines the class tokens (which a linear head turns into class logits);
  * S summed over heads, passed through a sigmoid, is the per-class mask.

So the spatial evidence behind a classification IS the predicted mask --
nothing is learned twice.  A cascade runs several stages against different
backbone layers and sums their mask logits.

    python3 demos/03_mask_decoder.py
"""

from dataclasses import replace

import numpy as np

from attnseg.config import load_config
from attnseg.data import render_scene, sample_scene
from attnseg.model import SegmentationModel
from attnseg.tensor import sigmoid, softmax

cfg = load_config("configs/toy.cfg")
model = SegmentationModel(cfg)

data_cfg = replace(cfg.data, image_size=cfg.data.resolved_image_size(cfg.encoder))
rng = np.random.default_rng(11)
image, labels = render_scene(sample_scene(rng, data_cfg), data_cfg, rng)

stages = model.forward(image[None])
print(f"{len(stages)} cascade stages; per stage:")
for i, out in enumerate(stages, 1):
    print(f"  stage {i}: class logits {out.class_logits.shape},"
          f" mask logits {out.mask_logits.shape} on grid {out.grid},"
          f" similarity {out.similarity.values.shape}")

final = stages[-1]

# Readout 1: similarity summed over heads equals this stage's mask logits.
summed = final.similarity.values.data.sum(axis=1)
print("\nmask logits == similarity summed over heads:",
      bool(np.array_equal(summed[0], final.mask_logits.data[0])))

# Readout 2: the same similarity, softmaxed, is the attention routing; its
# rows are distributions over the 64 feature tokens.
routing = softmax(final.similarity.values, axis=-1).data
print("attention rows sum to one:",
      bool(np.allclose(routing.sum(axis=-1), 1.0)))

# The cumulative mask logits sum every stage's contribution.
total = sum(s.mask_logits.data for s in stages)
print("cumulative logits are the stage sum:",
      bool(np.allclose(final.cumulative_logits.data, total)))

# Class logits carry one extra column: "this class is absent" (no mask for it).
k = cfg.data.classes
print(f"\nclass logits have {final.class_logits.shape[-1]} columns"
      f" = {k} classes + 1 absent flag")

# The untrained masks are noise; demo 07 trains this model until they snap
# onto the shapes.  Still, the plumbing end-to-end:
pred = model.infer(image)
print("inferred label map:", pred.shape, "labels used:", sorted(set(pred.ravel().tolist())))
print("\nper-class mask probability means (stage sum, untrained):")
probs = sigmoid(final.cumulative_logits).data[0]
for c in range(k):
    print(f"  class {c}: {probs[c].mean():.3f}")
