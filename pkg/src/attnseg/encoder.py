"""Plain, non-hierarchical vision transformer encoder.

The image is cut into non-overlapping P x P patches, each patch is flattened
and linearly projected, and learned position embeddings are added.  A stack
of identical pre-norm transformer layers then runs at constant resolution;
``encode`` returns the token sequence after every layer so downstream
consumers can pick any subset of depths.  There is no class token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import LayerNorm, Linear, TransformerLayer
from .tensor import Parameter, Tensor

__all__ = ["EncoderConfig", "TokenSequence", "PatchEmbed", "VitEncoder"]


@dataclass
class EncoderConfig:
    image_size: tuple[int, int]
    patch_size: int
    depth: int
    width: int
    heads: int
    mlp_ratio: int = 4

    def __post_init__(self):
        if isinstance(self.image_size, int):
            self.image_size = (self.image_size, self.image_size)
        else:
            self.image_size = tuple(self.image_size)
        h, w = self.image_size
        p = self.patch_size
        if h <= 0 or w <= 0 or p <= 0:
            raise ConfigError(f"image size {self.image_size} and patch size {p} must be positive")
        if h % p or w % p:
            raise ConfigError(f"image size {self.image_size} not divisible by patch size {p}")
        if self.depth < 1:
            raise ConfigError(f"depth must be at least 1, got {self.depth}")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by {self.heads} heads")
        if self.mlp_ratio < 1:
            raise ConfigError(f"mlp_ratio must be at least 1, got {self.mlp_ratio}")

    @property
    def grid(self):
        return (self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size)

    @property
    def seq_len(self):
        hp, wp = self.grid
        return hp * wp

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * 3


@dataclass
class TokenSequence:
    """Tokens ``[B, L, C]`` with the patch grid they are laid out on.

    ``source_layer`` is 0 for the patch embedding and i for the output of
    encoder layer i.
    """

    tokens: Tensor
    grid: tuple[int, int] = field(default=(0, 0))
    source_layer: int = 0

    def __post_init__(self):
        hp, wp = self.grid
        if self.tokens.ndim != 3:
            raise ShapeError(f"token sequences are [B, L, C], got shape {self.tokens.shape}")
        if hp * wp != self.tokens.shape[1]:
            raise ShapeError(f"grid {self.grid} does not cover {self.tokens.shape[1]} tokens")

    @property
    def seq_len(self):
        return self.tokens.shape[1]

    @property
    def width(self):
        return self.tokens.shape[2]


def _extract_patches(images, patch_size):
    """[B, H, W, 3] uint8/float -> [B, L, P*P*3] float rows, one per patch,
    in row-major grid order with each patch flattened row-major."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ShapeError(f"expected images [B, H, W, 3], got {images.shape}")
    b, h, w, _ = images.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
    hp, wp = h // p, w // p
    patches = images.reshape(b, hp, p, wp, p, 3)
    patches = patches.transpose(0, 1, 3, 2, 4, 5)  # [B, Hp, Wp, P, P, 3]
    return patches.reshape(b, hp * wp, p * p * 3)


class PatchEmbed:
    """Linear projection of flattened patches plus learned position embeddings."""

    def __init__(self, cfg: EncoderConfig, rng, dtype=np.float32, name="encoder.patch_embed"):
        self.cfg = cfg
        self.proj = Linear(rng, cfg.patch_dim, cfg.width, name, dtype)
        self.pos = Parameter(
            rng.normal(0.0, 0.02, size=(cfg.seq_len, cfg.width)).astype(dtype),
            "encoder.pos_embed",
        )
        self.dtype = dtype

    def __call__(self, images):
        flat = _extract_patches(images, self.cfg.patch_size).astype(self.dtype)
        if flat.shape[1] != self.cfg.seq_len:
            raise ShapeError(
                f"image produced {flat.shape[1]} patches, config expects {self.cfg.seq_len}"
            )
        tokens = self.proj(Tensor(flat)) + self.pos
        return TokenSequence(tokens, self.cfg.grid, source_layer=0)

    def parameters(self):
        return self.proj.parameters() + [self.pos]


class VitEncoder:
    """Patch embedding plus ``depth`` transformer layers at one resolution.

    ``final_norm`` is a single layer norm shared by every feature that leaves
    the encoder; consumers normalize a layer's output through
    :meth:`normalized` rather than each keeping a private copy.
    """

    def __init__(self, cfg: EncoderConfig, rng, dtype=np.float32):
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg, rng, dtype)
        self.layers = [
            TransformerLayer(rng, cfg.width, cfg.heads, cfg.mlp_ratio, f"encoder.layers.{i}", dtype)
            for i in range(cfg.depth)
        ]
        self.final_norm = LayerNorm(cfg.width, "encoder.norm", dtype)

    def patchify(self, images):
        return self.patch_embed(images)

    def encode(self, images):
        """Token sequences after each layer, index 0 = layer 1."""
        seq = self.patch_embed(images)
        features = []
        x = seq.tokens
        for i, layer in enumerate(self.layers, start=1):
            x, _ = layer(x, grid=seq.grid)
            features.append(TokenSequence(x, seq.grid, source_layer=i))
        return features

    def normalized(self, feature: TokenSequence) -> TokenSequence:
        return TokenSequence(
            self.final_norm(feature.tokens), feature.grid, feature.source_layer
        )

    def parameters(self):
        params = self.patch_embed.parameters()
        for layer in self.layers:
            params += layer.parameters()
        params += self.final_norm.parameters()
        return params
