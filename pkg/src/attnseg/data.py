"""Synthetic shapes dataset and the binary PPM/PGM image formats.

Each image is a flat background with a few axis-aligned rectangles, circles
and triangles drawn over it in class-linked colors, plus additive Gaussian
noise.  The label map is exact by construction: the same geometric predicate
that colors a pixel assigns its class, with later shapes drawn over earlier
ones.  Class c always uses the same color and shape kind, so the task is
learnable from color alone but the boundaries still have to come from the
masks.  Shapes span a third to half of the image side and are placed fully
inside the canvas, so every instance covers several mask-grid cells; overlap
between shapes is the only source of partial outlines.

Images are written as binary PPM (P6), label maps as binary PGM (P5), both
with maxval 255.  Generation is a pure function of (seed, config): the same
inputs produce byte-identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "PALETTE",
    "Shape",
    "sample_scene",
    "render_scene",
    "generate_dataset",
    "write_ppm",
    "read_ppm",
    "write_pgm",
    "read_pgm",
    "list_split",
    "load_split",
    "to_model_input",
]

# Background first, then one visually distinct color per shape class.
PALETTE = np.array(
    [
        (52, 56, 60),
        (204, 62, 48),
        (72, 188, 82),
        (66, 86, 214),
        (224, 196, 58),
        (186, 70, 192),
        (62, 192, 202),
        (232, 232, 232),
        (240, 138, 46),
        (120, 78, 190),
        (96, 150, 52),
        (190, 148, 106),
    ],
    dtype=np.uint8,
)

_KINDS = ("rectangle", "circle", "triangle")


@dataclass
class Shape:
    """One rendered shape; ``params`` are float pixel coordinates."""

    kind: str
    class_id: int
    params: tuple

    def contains(self, ys, xs):
        """Membership test for pixel centers (broadcastable arrays)."""
        if self.kind == "rectangle":
            y0, x0, y1, x1 = self.params
            return (ys >= y0) & (ys <= y1) & (xs >= x0) & (xs <= x1)
        if self.kind == "circle":
            cy, cx, r = self.params
            return (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
        if self.kind == "triangle":
            ay, ax, by, bx, cy, cx = self.params
            d1 = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
            d2 = (cx - bx) * (ys - by) - (cy - by) * (xs - bx)
            d3 = (ax - cx) * (ys - cy) - (ay - cy) * (xs - cx)
            neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
            pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
            return ~(neg & pos)
        raise DataError(f"unknown shape kind {self.kind!r}")


def class_kind(class_id):
    return _KINDS[(class_id - 1) % len(_KINDS)]


def sample_scene(rng, cfg):
    """Draw the shape list for one image from ``cfg`` (a DataConfig)."""
    size = cfg.image_size
    if size < 8:
        raise ConfigError(f"image size {size} too small to place shapes")
    if cfg.classes < 2:
        raise ConfigError(f"need at least 2 classes, got {cfg.classes}")
    if cfg.classes > len(PALETTE):
        raise ConfigError(f"palette supports up to {len(PALETTE)} classes, got {cfg.classes}")
    count = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    lo = max(3.0, 0.3 * size)
    hi = max(lo + 1.0, size / 2.0)
    shapes = []
    for _ in range(count):
        class_id = int(rng.integers(1, cfg.classes))
        kind = class_kind(class_id)
        if kind == "rectangle":
            hh, hw = rng.uniform(lo, hi, size=2) / 2.0
            cy, cx = _center(rng, size, hh), _center(rng, size, hw)
            params = (cy - hh, cx - hw, cy + hh, cx + hw)
        elif kind == "circle":
            r = float(rng.uniform(lo, hi)) / 2.0
            cy, cx = _center(rng, size, r), _center(rng, size, r)
            params = (cy, cx, r)
        else:
            hw = float(rng.uniform(lo, hi)) / 2.0
            height = float(rng.uniform(lo, hi))
            cy, cx = _center(rng, size, height / 2.0), _center(rng, size, hw)
            params = (cy - height / 2.0, cx, cy + height / 2.0, cx - hw, cy + height / 2.0, cx + hw)
        shapes.append(Shape(kind, class_id, tuple(float(p) for p in params)))
    return shapes


def _center(rng, size, half):
    """Center coordinate keeping an extent of ``half`` inside the canvas."""
    low, high = half, size - 1 - half
    if high <= low:
        return (size - 1) / 2.0
    return float(rng.uniform(low, high))


def render_scene(shapes, cfg, rng):
    """Rasterize shapes into (image uint8 [H, W, 3], labels uint8 [H, W]).

    Pixel centers sit at integer coordinates.  ``rng`` supplies the noise and
    must be the same generator that sampled the scene for reproducibility.
    """
    size = cfg.image_size
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    image = np.empty((size, size, 3), dtype=np.float64)
    image[:] = PALETTE[0]
    labels = np.zeros((size, size), dtype=np.uint8)
    for shape in shapes:
        inside = shape.contains(ys, xs)
        image[inside] = PALETTE[shape.class_id]
        labels[inside] = shape.class_id
    if cfg.noise_std > 0:
        image = image + rng.normal(0.0, cfg.noise_std, size=image.shape)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    return image, labels


def generate_dataset(out_dir, count, cfg, seed, split="train"):
    """Write ``count`` image/label pairs under ``out_dir/split``.

    Derives one child generator per (seed, split, index), so any prefix of a
    dataset is independent of its length and of other splits.
    """
    split_dir = os.path.join(out_dir, split)
    os.makedirs(split_dir, exist_ok=True)
    paths = []
    for index in range(count):
        rng = np.random.default_rng(np.random.SeedSequence((seed, _split_tag(split), index)))
        shapes = sample_scene(rng, cfg)
        image, labels = render_scene(shapes, cfg, rng)
        image_path = os.path.join(split_dir, f"img_{index:05d}.ppm")
        label_path = os.path.join(split_dir, f"lbl_{index:05d}.pgm")
        write_ppm(image_path, image)
        write_pgm(label_path, labels)
        paths.append((image_path, label_path))
    return paths


def _split_tag(split):
    return int.from_bytes(split.encode("ascii"), "big") % (2**31)


# ---- netpbm I/O ---------------------------------------------------------------


def write_ppm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"PPM wants [H, W, 3] uint8, got {image.shape}")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def write_pgm(path, gray):
    gray = np.asarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise DataError(f"PGM wants [H, W] uint8, got {gray.shape}")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def _read_netpbm(path, magic, channels):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(magic):
        raise DataError(f"{path}: expected {magic.decode()} header")

    # Tokenize the header: magic, width, height, maxval; '#' starts a comment.
    tokens = []
    pos = len(magic)
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise DataError(f"{path}: malformed header") from exc
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 supported, got {maxval}")
    expected = w * h * channels
    raster = blob[pos : pos + expected]
    if len(raster) != expected:
        raise DataError(f"{path}: raster has {len(raster)} bytes, expected {expected}")
    data = np.frombuffer(raster, dtype=np.uint8)
    return data.reshape((h, w, channels) if channels > 1 else (h, w)).copy()


def read_ppm(path):
    return _read_netpbm(path, b"P6", 3)


def read_pgm(path):
    return _read_netpbm(path, b"P5", 1)


# ---- dataset loading ------------------------------------------------------------


def list_split(data_dir, split=None):
    """Sorted (image, label) path pairs in ``data_dir`` or ``data_dir/split``."""
    root = os.path.join(data_dir, split) if split else data_dir
    if not os.path.isdir(root):
        raise DataError(f"no such dataset directory: {root}")
    images = sorted(f for f in os.listdir(root) if f.startswith("img_") and f.endswith(".ppm"))
    pairs = []
    for name in images:
        label = "lbl_" + name[4:-4] + ".pgm"
        label_path = os.path.join(root, label)
        if not os.path.exists(label_path):
            raise DataError(f"missing label map for {name}: {label}")
        pairs.append((os.path.join(root, name), label_path))
    if not pairs:
        raise DataError(f"no image/label pairs found in {root}")
    return pairs


def load_split(data_dir, split=None):
    """All images and labels of a split as stacked arrays."""
    pairs = list_split(data_dir, split)
    images = np.stack([read_ppm(img) for img, _ in pairs])
    labels = np.stack([read_pgm(lbl) for _, lbl in pairs])
    return images, labels


def to_model_input(images):
    """uint8 images to float in [-1, 1]."""
    return np.asarray(images, dtype=np.float64) / 127.5 - 1.0
