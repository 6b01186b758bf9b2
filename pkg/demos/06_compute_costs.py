"""The analytic cost model: multiply-accumulate counts per component.

Costs are exact integer MAC counts for the matrix multiplies (projections,
attention scores, weighted sums, MLPs); elementwise work and softmaxes are
excluded by convention.  The same numbers back the `flops` CLI subcommand.

    python3 demos/06_compute_costs.py
"""

from attnseg.cli import main
from attnseg.config import load_config
from attnseg.flops import MACS_PER_GFLOP, estimate

# A 24-layer, 1024-wide model on 640x640 input, 16x16 patches.
cfg = load_config("configs/vit_large_640.cfg")
est = estimate(cfg)

print("per-component G MACs at 640x640:")
print(f"  patch embedding {est.patch_embed / MACS_PER_GFLOP:10.2f}")
layer = est.encoder_layers[0]
print(f"  one layer       {layer.total / MACS_PER_GFLOP:10.2f}"
      f"  (qkv+proj {(layer.qkv + layer.proj) / MACS_PER_GFLOP:.2f},"
      f" attention {(layer.scores + layer.weighted_sum) / MACS_PER_GFLOP:.2f},"
      f" mlp {layer.mlp / MACS_PER_GFLOP:.2f})")
print(f"  backbone        {est.backbone_total / MACS_PER_GFLOP:10.2f}")
print(f"  decoder         {est.decoder_total / MACS_PER_GFLOP:10.2f}")
print(f"  total           {est.total / MACS_PER_GFLOP:10.2f}")

# For a transformer layer on L tokens at width C (MLP ratio 4) the closed
# form is 12*L*C^2 + 2*L^2*C; attention cost is independent of head count.
L = cfg.encoder.grid[0] * cfg.encoder.grid[1]
C = cfg.encoder.width
print(f"\nclosed form 12*L*C^2 + 2*L^2*C = {(12 * L * C * C + 2 * L * L * C) / MACS_PER_GFLOP:.2f} G"
      f"  (L={L}, C={C})")

# The CLI prints the full table; equal layers are grouped into one row.
print("\n$ attnseg flops --config configs/vit_large_640_shrunk.cfg")
main(["flops", "--config", "configs/vit_large_640_shrunk.cfg"])

print("\n$ attnseg flops --config configs/vit_large_640.cfg --crop 512 --kv")
main(["flops", "--config", "configs/vit_large_640.cfg", "--crop", "512", "--kv"])
