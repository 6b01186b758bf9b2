"""Shrinking the token grid mid-backbone, and recovering it for decoding.

Most of a plain ViT's cost is depth x full-resolution attention.  The shrunk
variant picks one backbone layer and lets only a nearest-subsampled quarter
of the tokens act as queries there (keys/values keep full resolution), so
every later layer runs on a grid halved per axis.  Before decoding, two
cross-attention blocks with learned full-grid queries read the coarse tokens
back up to full resolution.  A "naive" flavour skips that recovery and
decodes at quarter resolution directly.

    python3 demos/04_query_shrink.py
"""

import numpy as np

from attnseg.config import load_config
from attnseg.flops import MACS_PER_GFLOP, compare, estimate
from attnseg.model import SegmentationModel
from attnseg.shrink import encode_shrunk

cfg = load_config("configs/toy_shrunk.cfg")
qd = cfg.shrink.resolve(cfg.encoder.depth)
print(f"toy config: depth {cfg.encoder.depth}; layer {qd} is the last at full"
      f" resolution, layer {qd + 1} runs with subsampled queries")

model = SegmentationModel(cfg)
images = np.random.default_rng(0).uniform(-1, 1, size=(1, 32, 32, 3)).astype(np.float32)

features, pre_qd, final = encode_shrunk(model.encoder, cfg.shrink, images)
print("\nlayer  grid    tokens")
for seq in features:
    marker = "  <- queries subsampled entering this layer" if seq.source_layer == qd + 1 else ""
    print(f"{seq.source_layer:>5}  {seq.grid}  {seq.tokens.shape[1]:>5}{marker}")

# The upsampler's learned queries restore the full grid before decoding.
out = model.forward(images)[0]
print(f"\ndecoded on grid {out.grid} after query-based upsampling")

naive = SegmentationModel(load_config("configs/toy_shrunk_naive.cfg"))
print(f"naive variant decodes straight on {naive.forward(images)[0].grid}")

# At realistic scale the saving is what matters.  Compare two 640x640
# 24-layer/1024-wide estimates: plain vs queries subsampled at layer 8.
plain = load_config("configs/vit_large_640.cfg")
shrunk = load_config("configs/vit_large_640_shrunk.cfg")
comparison = compare(plain, shrunk)
print(f"\nplain  total: {comparison.plain.total / MACS_PER_GFLOP:8.1f} G MACs")
print(f"shrunk total: {comparison.shrunk.total / MACS_PER_GFLOP:8.1f} G MACs")
print(f"ratio: {comparison.ratio:.3f}  (saves {comparison.savings / MACS_PER_GFLOP:.1f} G)")

# The recovery blocks cost about two full-resolution decoder layers, so the
# subsampling layer must come early enough to amortize them:
for qd_layer in (8, 16, 23):
    est = estimate(load_config("configs/vit_large_640_shrunk.cfg",
                               overrides=(f"shrunk.qd_layer={qd_layer}",)))
    ratio = est.total / comparison.plain.total
    note = "cheaper" if ratio < 1 else "MORE expensive than plain"
    print(f"  subsample after layer {qd_layer:>2}: ratio {ratio:.3f}  ({note})")
