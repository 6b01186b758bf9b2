"""Mask decoder: class tokens read the backbone features through
cross-attention, and the same query/key similarity that drives the attention
softmax is reused, summed over heads and squashed with a sigmoid, as a
per-class mask.

A cascade runs one decoder stage per selected backbone layer, deepest layer
first.  Each stage updates the class tokens, emits per-class logits through
its own linear head, and contributes its mask logits to a running sum; the
running sum after the final stage is the mask prediction, and intermediate
sums are supervised during training.

The no-object category is an extra column in the class logits only; there is
no extra token and no extra mask row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import TokenSequence
from .errors import ConfigError, ShapeError
from .layers import DecoderBlock, Linear
from .tensor import Parameter, Tensor, truncated_normal

__all__ = [
    "SimilarityMap",
    "MaskStack",
    "StageOutput",
    "MaskDecoder",
    "semantic_inference",
    "labels_from_scores",
]


@dataclass
class SimilarityMap:
    """Scaled query/key dot products ``[B, heads, N, L]``.

    ``values`` is the one tensor both branches consume: softmax over L for
    the token update, head-sum then sigmoid for the masks.
    """

    values: Tensor
    scale: float


@dataclass
class MaskStack:
    """Per-class mask probabilities ``[N, H, W]`` (numpy, inference side)."""

    probs: np.ndarray

    def __post_init__(self):
        if self.probs.ndim != 3:
            raise ShapeError(f"mask stack must be [N, H, W], got {self.probs.shape}")
        if self.probs.min() < 0.0 or self.probs.max() > 1.0:
            raise ShapeError("mask probabilities must lie in [0, 1]")


@dataclass
class StageOutput:
    class_logits: Tensor  # [B, N, K+1]
    mask_logits: Tensor  # [B, N, L], this stage's contribution
    cumulative_logits: Tensor  # [B, N, L], sum of stages so far
    similarity: SimilarityMap  # [B, h, N, L]
    grid: tuple[int, int]


class MaskDecoder:
    """A cascade of decoder stages over class tokens.

    ``num_classes`` class tokens are learned; token i is permanently bound to
    class i.  Class logits have ``num_classes + 1`` columns, the last being
    the no-object slot.
    """

    def __init__(self, rng, num_classes, dim, heads, mlp_ratio, num_stages, dtype=np.float32):
        if num_classes < 1:
            raise ConfigError(f"need at least one class, got {num_classes}")
        if num_stages < 1:
            raise ConfigError(f"need at least one stage, got {num_stages}")
        self.num_classes = num_classes
        self.num_stages = num_stages
        self.class_embed = Parameter(
            truncated_normal(rng, (num_classes, dim), 0.02, dtype), "decoder.class_embed"
        )
        self.blocks = [
            DecoderBlock(rng, dim, heads, mlp_ratio, f"decoder.stages.{i}", dtype)
            for i in range(num_stages)
        ]
        self.heads = [
            Linear(rng, dim, num_classes + 1, f"decoder.stages.{i}.classify", dtype)
            for i in range(num_stages)
        ]

    def __call__(self, features: list[TokenSequence]) -> list[StageOutput]:
        """Run the cascade over ``features`` (stage order, deepest first)."""
        if len(features) != self.num_stages:
            raise ConfigError(
                f"decoder built for {self.num_stages} stages, got {len(features)} features"
            )
        grid = features[0].grid
        for f in features[1:]:
            if f.grid != grid:
                raise ConfigError(f"cascade features disagree on grid: {f.grid} vs {grid}")

        n, c = self.class_embed.shape
        tokens = self.class_embed.reshape(1, n, c)
        outputs = []
        cumulative = None
        for block, head, feature in zip(self.blocks, self.heads, features):
            tokens, sim = block(tokens, feature.tokens)
            scale = 1.0 / np.sqrt(c // block.cross_attn.heads)
            stage_masks = sim.sum(axis=1)  # head sum: [B, N, L]
            cumulative = stage_masks if cumulative is None else cumulative + stage_masks
            outputs.append(
                StageOutput(
                    class_logits=head(tokens),
                    mask_logits=stage_masks,
                    cumulative_logits=cumulative,
                    similarity=SimilarityMap(sim, float(scale)),
                    grid=feature.grid,
                )
            )
        return outputs

    def parameters(self):
        params = [self.class_embed]
        for block, head in zip(self.blocks, self.heads):
            params += block.parameters() + head.parameters()
        return params


def labels_from_scores(class_probs, mask_probs):
    """argmax over classes of class_prob[c] * mask_prob[c, y, x].

    Ties resolve to the lowest class index.  Scaling all class probabilities
    by one positive constant cannot change the result.
    """
    class_probs = np.asarray(class_probs, dtype=np.float64)
    mask_probs = np.asarray(mask_probs, dtype=np.float64)
    if class_probs.ndim != 1 or mask_probs.ndim != 3:
        raise ShapeError(
            f"expected class probs [N] and masks [N, H, W], got {class_probs.shape} and {mask_probs.shape}"
        )
    if class_probs.shape[0] != mask_probs.shape[0]:
        raise ShapeError(
            f"{class_probs.shape[0]} class probs vs {mask_probs.shape[0]} masks"
        )
    scores = class_probs[:, None, None] * mask_probs
    return scores.argmax(axis=0).astype(np.int64)


def semantic_inference(class_logits, mask_probs):
    """Reduce final-stage class logits and mask probabilities to a label map.

    ``class_logits``: ``[N, K+1]`` (last column = no object); class token i
    scores class i, so the per-class confidence is softmax row i at column i.
    The no-object column participates in the softmax normalization and is
    then dropped.  ``mask_probs``: ``[N, H, W]`` or a :class:`MaskStack`.
    """
    if isinstance(mask_probs, MaskStack):
        mask_probs = mask_probs.probs
    logits = class_logits.data if isinstance(class_logits, Tensor) else np.asarray(class_logits)
    if logits.ndim != 2:
        raise ShapeError(f"class logits must be [N, K+1], got {logits.shape}")
    n = logits.shape[0]
    if logits.shape[1] != n + 1:
        raise ShapeError(
            f"class logits must have one no-object column: got {logits.shape} for {n} tokens"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    class_probs = probs[np.arange(n), np.arange(n)]
    return labels_from_scores(class_probs, mask_probs)
