"""The synthetic shapes dataset, its file formats, and the mIoU metric.

Scenes are 1-3 solid shapes (rectangles, circles, triangles) on a dark
background; the label map is rasterized by the same geometry that painted
the image, so ground truth is exact by construction.  Images are stored as
binary PPM, labels as binary PGM: dependency-free and bit-exact.

    python3 demos/00_dataset_and_metrics.py
"""

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from attnseg.config import load_config
from attnseg.data import (
    generate_dataset,
    list_split,
    read_pgm,
    read_ppm,
    render_scene,
    sample_scene,
)
from attnseg.evaluate import ConfusionMatrix, format_report

cfg = load_config("configs/toy.cfg")
data_cfg = replace(cfg.data, image_size=cfg.data.resolved_image_size(cfg.encoder))

# One scene, straight from the generator.
rng = np.random.default_rng(5)
shapes = sample_scene(rng, data_cfg)
print("sampled shapes:")
for s in shapes:
    print("   ", s)
image, labels = render_scene(shapes, data_cfg, rng)
print("image", image.shape, image.dtype, " labels", labels.shape, labels.dtype)

chars = ".ox#"
for row in labels[::2]:            # every other row, to keep it short
    print("   ", "".join(chars[v] for v in row))

# Generation is deterministic per (seed, split, index): the same call always
# writes byte-identical files, and a prefix of a split never changes.
root = Path(tempfile.mkdtemp(prefix="attnseg_demo_"))
generate_dataset(root / "a", 4, data_cfg, seed=0, split="eval")
generate_dataset(root / "b", 4, data_cfg, seed=0, split="eval")
pairs = list(zip(sorted((root / "a" / "eval").iterdir()),
                 sorted((root / "b" / "eval").iterdir())))
print("\nregenerated files byte-identical:",
      all(x.read_bytes() == y.read_bytes() for x, y in pairs))
print("split listing:",
      [Path(img).name for img, _ in list_split(root / "a", "eval")][:2], "...")

# The formats round-trip exactly.
img_path, lbl_path = list_split(root / "a", "eval")[0]
print("PPM round-trip exact:", bool(np.array_equal(read_ppm(img_path).shape, (32, 32, 3))))
print("PGM label values:", sorted(set(read_pgm(lbl_path).ravel().tolist())))

# mIoU: per-class intersection over union on pooled pixel counts.
cm = ConfusionMatrix(2)
cm.update(np.array([[0, 0], [1, 1]]), np.zeros((2, 2), dtype=np.int64))
print("\neverything predicted as class 0 on a half/half map:")
print(format_report(cm.iou(), cm.mean_iou()))

# Counts pool across images before the division, so evaluating a split in
# chunks (or on several processes) merges losslessly.
first, second = ConfusionMatrix(2), ConfusionMatrix(2)
first.update(np.array([[0]]), np.array([[0]]))
second.update(np.array([[1]]), np.array([[0]]))
merged = first + second
print("merged counts:\n", merged.counts)
