"""The transformer encoder: image to per-layer token grids.

An image is cut into non-overlapping patches, each patch linearly projected
to a token, and the token grid run through a stack of pre-norm transformer
layers.  The decoder can tap any layer, so `encode` returns all of them.

    python3 demos/02_encoder.py
"""

from dataclasses import replace

import numpy as np

from attnseg.config import load_config
from attnseg.data import sample_scene, render_scene, to_model_input
from attnseg.encoder import VitEncoder

cfg = load_config("configs/toy.cfg")
print("image", cfg.encoder.image_size, "patch", cfg.encoder.patch_size,
      "-> grid", cfg.encoder.grid)

rng = np.random.default_rng(0)
encoder = VitEncoder(cfg.encoder, rng, dtype=np.float32)
names = [p.name for p in encoder.parameters()]
print(f"{len(names)} parameter tensors, e.g.")
for name in names[:3] + names[-2:]:
    print("   ", name)

# Encode one synthetic scene.  Inputs are uint8 images scaled to [-1, 1].
# (data.image_size = 0 in the config means "follow the encoder".)
data_cfg = replace(cfg.data, image_size=cfg.data.resolved_image_size(cfg.encoder))
scene_rng = np.random.default_rng(7)
image, labels = render_scene(sample_scene(scene_rng, data_cfg), data_cfg, scene_rng)
tokens = to_model_input(image[None]).astype(np.float32)

features = encoder.encode(tokens)
print("\nlayer  grid   tokens  mean      std")
for seq in features:
    t = seq.tokens.data
    print(f"{seq.source_layer:>5}  {seq.grid}  {t.shape[1]:>5}  {t.mean():+.4f}  {t.std():.4f}")

# The decoder always reads features through one shared final layer norm.
final = encoder.normalized(features[-1])
t = final.tokens.data
print(f"\nafter the shared final norm: mean {t.mean():+.4f}, std {t.std():.4f}")

# Each token is one patch: token (r, c) of the grid summarizes image pixels
# [r*P:(r+1)*P, c*P:(c+1)*P].  The cascade exploits this spatial binding.
gh, gw = cfg.encoder.grid
print(f"\ntoken 0 covers pixels [0:{cfg.encoder.patch_size}, 0:{cfg.encoder.patch_size}];"
      f" token {gw - 1} covers the top-right corner")
