"""Analytic compute-cost model.

Counts multiply-accumulates (1 MAC = 1 FLOP here, matching the convention of
the usual flop-counting tools) for every matrix product in the network:
patch embedding, per-layer attention projections and attention matrix
products, MLPs, the query down/upsampling blocks, the mask decoder stages and
the classification heads.  Elementwise work (residuals, norms, softmax,
sigmoid, interpolation, the head-sum of the similarity map) is excluded, so
the mask branch itself is free.

Everything is integer arithmetic on shapes; nothing is instantiated, so
estimating a 24-layer, 1024-wide model at a 640 x 640 crop is instant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError

__all__ = ["LayerCost", "StageCost", "CostBreakdown", "estimate", "compare", "MACS_PER_GFLOP"]

MACS_PER_GFLOP = 10**9


@dataclass
class LayerCost:
    """MACs of one encoder layer (or a query-downsampled one)."""

    qkv: int
    scores: int
    weighted_sum: int
    proj: int
    mlp: int

    @property
    def total(self):
        return self.qkv + self.scores + self.weighted_sum + self.proj + self.mlp


@dataclass
class StageCost:
    """MACs of one decoder block (self-attention, cross-attention, MLP)."""

    self_attn: int
    cross_attn: int
    mlp: int

    @property
    def total(self):
        return self.self_attn + self.cross_attn + self.mlp


@dataclass
class CostBreakdown:
    patch_embed: int
    encoder_layers: list[LayerCost] = field(default_factory=list)
    qu_blocks: list[StageCost] = field(default_factory=list)
    decoder_stages: list[StageCost] = field(default_factory=list)
    cls_heads: int = 0

    @property
    def backbone_total(self):
        return self.patch_embed + sum(layer.total for layer in self.encoder_layers)

    @property
    def decoder_total(self):
        return (
            sum(block.total for block in self.qu_blocks)
            + sum(stage.total for stage in self.decoder_stages)
            + self.cls_heads
        )

    @property
    def total(self):
        return self.backbone_total + self.decoder_total

    def gflops(self):
        return self.total / MACS_PER_GFLOP


def _attention_macs(queries, keys, width):
    """(qkv, scores, weighted_sum, proj) for multi-head attention.

    Per-head score and weighted-sum products cost q * k * head_dim each;
    summed over heads that is q * k * width, independent of the head count.
    """
    qkv = (queries + 2 * keys) * width * width
    scores = queries * keys * width
    weighted = queries * keys * width
    proj = queries * width * width
    return qkv, scores, weighted, proj


def _mlp_macs(tokens, width, ratio):
    return 2 * tokens * width * (ratio * width)


def _encoder_layer(queries, keys, width, ratio):
    qkv, scores, weighted, proj = _attention_macs(queries, keys, width)
    return LayerCost(qkv, scores, weighted, proj, _mlp_macs(queries, width, ratio))


def _decoder_stage(queries, keys, width, ratio):
    s_qkv, s_sc, s_ws, s_pr = _attention_macs(queries, queries, width)
    c_qkv, c_sc, c_ws, c_pr = _attention_macs(queries, keys, width)
    return StageCost(
        self_attn=s_qkv + s_sc + s_ws + s_pr,
        cross_attn=c_qkv + c_sc + c_ws + c_pr,
        mlp=_mlp_macs(queries, width, ratio),
    )


def estimate(cfg, crop=None):
    """Cost of one forward pass of ``cfg`` (a ModelConfig) at ``crop``
    resolution (defaults to the configured image size)."""
    enc = cfg.encoder
    if crop is not None:
        if isinstance(crop, int):
            crop = (crop, crop)
        if crop[0] % enc.patch_size or crop[1] % enc.patch_size:
            raise ConfigError(f"crop {crop} not divisible by patch size {enc.patch_size}")
        grid = (crop[0] // enc.patch_size, crop[1] // enc.patch_size)
    else:
        grid = enc.grid
    seq = grid[0] * grid[1]
    width = enc.width
    ratio = enc.mlp_ratio
    dec_ratio = cfg.decoder_mlp_ratio
    classes = cfg.data.classes

    breakdown = CostBreakdown(patch_embed=seq * enc.patch_dim * width)

    shrink = cfg.shrink if cfg.shrink_enabled else None
    if shrink is None:
        for _ in range(enc.depth):
            breakdown.encoder_layers.append(_encoder_layer(seq, seq, width, ratio))
        stage_seq = [seq] * len(cfg.cascade_layers)
    else:
        qd = shrink.resolve(enc.depth)
        reduced = seq // (shrink.qd_factor * shrink.qd_factor)
        for i in range(1, enc.depth + 1):
            if i <= qd:
                breakdown.encoder_layers.append(_encoder_layer(seq, seq, width, ratio))
            elif i == qd + 1:
                breakdown.encoder_layers.append(_encoder_layer(reduced, seq, width, ratio))
            else:
                breakdown.encoder_layers.append(_encoder_layer(reduced, reduced, width, ratio))
        if shrink.naive:
            stage_seq = [reduced if qd < enc.depth else seq]
        else:
            low = reduced if qd < enc.depth else seq
            breakdown.qu_blocks.append(_decoder_stage(seq, seq, width, dec_ratio))
            breakdown.qu_blocks.append(_decoder_stage(seq, low, width, dec_ratio))
            stage_seq = [seq]

    for stage_keys in stage_seq:
        breakdown.decoder_stages.append(_decoder_stage(classes, stage_keys, width, dec_ratio))
    breakdown.cls_heads = len(stage_seq) * classes * width * (classes + 1)
    return breakdown


@dataclass
class Comparison:
    plain: CostBreakdown
    shrunk: CostBreakdown

    @property
    def ratio(self):
        return self.shrunk.total / self.plain.total

    @property
    def savings(self):
        return self.plain.total - self.shrunk.total


def compare(plain_cfg, shrunk_cfg, crop=None):
    return Comparison(estimate(plain_cfg, crop), estimate(shrunk_cfg, crop))
