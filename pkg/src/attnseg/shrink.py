"""Shrunk backbone: query-based downsampling and upsampling.

To cut attention cost, one encoder layer partway through the stack runs with
nearest-subsampled queries (the top-left token of each 2x2 cell) while its
keys and values keep full resolution.  That layer reuses the backbone layer's
own weights; every later layer then runs on a quarter of the tokens.

Resolution is restored by a pair of query-based upsampling blocks, each a
standard transformer decoder layer (self-attention over the queries,
cross-attention into a memory, MLP):

* the first block owns a learned query grid at the pre-downsampling
  resolution and reads the last full-resolution backbone feature;
* the second block takes the first block's output as queries and reads the
  final quarter-resolution backbone feature.

The second block's output, back at full grid resolution, is what the mask
decoder consumes.  The naive variant skips upsampling and hands the decoder
the quarter-resolution feature directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import TokenSequence, VitEncoder
from .errors import ConfigError
from .layers import DecoderBlock, LayerNorm
from .tensor import Parameter

__all__ = ["ShrinkConfig", "QueryUpsampler", "encode_shrunk"]


@dataclass
class ShrinkConfig:
    """``qd_layer`` counts the layers kept at full resolution: the layer after
    it runs with subsampled queries.  ``qd_layer <= 0`` means depth // 3.
    ``qd_layer == depth`` degenerates to a plain backbone (useful for cost
    accounting); a working reduction needs ``qd_layer < depth``."""

    qd_layer: int = 0
    qd_factor: int = 2
    naive: bool = False
    qu_count: int = 2

    def resolve(self, depth):
        qd = self.qd_layer if self.qd_layer > 0 else max(1, depth // 3)
        if not 1 <= qd <= depth:
            raise ConfigError(f"qd_layer {qd} outside [1, {depth}]")
        if self.qd_factor != 2:
            raise ConfigError(f"only qd_factor 2 is supported, got {self.qd_factor}")
        if self.qu_count != 2:
            raise ConfigError(f"only qu_count 2 is supported, got {self.qu_count}")
        return qd

    def validate_grid(self, grid):
        hp, wp = grid
        if hp % self.qd_factor or wp % self.qd_factor:
            raise ConfigError(f"grid {grid} not divisible by downsampling factor {self.qd_factor}")


class QueryUpsampler:
    """Learned queries plus two decoder blocks that lift quarter-resolution
    features back to the full token grid."""

    def __init__(self, rng, grid, dim, heads, mlp_ratio, dtype=np.float32):
        hp, wp = grid
        self.grid = grid
        self.queries = Parameter(
            rng.normal(0.0, 0.02, size=(hp * wp, dim)).astype(dtype), "shrunk.qu_queries"
        )
        self.block1 = DecoderBlock(rng, dim, heads, mlp_ratio, "shrunk.qu1", dtype)
        self.block2 = DecoderBlock(rng, dim, heads, mlp_ratio, "shrunk.qu2", dtype)
        self.norm = LayerNorm(dim, "shrunk.norm", dtype)

    def __call__(self, full_res_memory: TokenSequence, low_res_memory: TokenSequence) -> TokenSequence:
        l, c = self.queries.shape
        q = self.queries.reshape(1, l, c)
        q, _ = self.block1(q, full_res_memory.tokens)
        q, _ = self.block2(q, low_res_memory.tokens)
        return TokenSequence(self.norm(q), self.grid, source_layer=low_res_memory.source_layer)

    def parameters(self):
        return [self.queries] + self.block1.parameters() + self.block2.parameters() + self.norm.parameters()


def encode_shrunk(encoder: VitEncoder, cfg: ShrinkConfig, images):
    """Run the encoder with query downsampling after layer ``qd_layer``.

    Returns ``(features, pre_qd, final)``: the per-layer token sequences (the
    first ``qd_layer`` at full grid, the rest at the reduced grid), plus the
    two sequences the upsampler needs.  With ``qd_layer == depth`` this is
    exactly :meth:`VitEncoder.encode`.
    """
    qd = cfg.resolve(encoder.cfg.depth)
    seq = encoder.patch_embed(images)
    if qd < encoder.cfg.depth:
        cfg.validate_grid(seq.grid)

    features = []
    x, grid = seq.tokens, seq.grid
    for i, layer in enumerate(encoder.layers, start=1):
        stride = cfg.qd_factor if i == qd + 1 else 1
        x, grid = layer(x, grid=grid, query_stride=stride)
        features.append(TokenSequence(x, grid, source_layer=i))

    pre_qd = features[qd - 1]
    return features, pre_qd, features[-1]
