"""Shared transformer building blocks.

All blocks operate on batched token tensors shaped ``[B, L, C]`` and keep the
pre-norm residual layout: the sublayer sees a normalized copy of the stream
and its output is added back to the raw stream.  Weight matrices start from a
truncated normal (std 0.02) and biases from zero, so freshly zeroed sublayers
reduce to the identity.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError
from .tensor import Parameter, Tensor, gelu, layer_norm, softmax, truncated_normal

__all__ = [
    "Linear",
    "LayerNorm",
    "Attention",
    "MlpBlock",
    "TransformerLayer",
    "DecoderBlock",
    "split_heads",
    "merge_heads",
    "scaled_similarity",
    "subsample_grid",
]


class Linear:
    def __init__(self, rng, in_dim, out_dim, name, dtype=np.float32, std=0.02):
        self.weight = Parameter(truncated_normal(rng, (in_dim, out_dim), std, dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(out_dim, dtype=dtype), f"{name}.bias")

    def __call__(self, x):
        return x @ self.weight + self.bias

    def parameters(self):
        return [self.weight, self.bias]


class LayerNorm:
    def __init__(self, dim, name, dtype=np.float32, eps=1e-6):
        self.gamma = Parameter(np.ones(dim, dtype=dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(dim, dtype=dtype), f"{name}.beta")
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)

    def parameters(self):
        return [self.gamma, self.beta]


def split_heads(x, heads):
    """[B, L, C] -> [B, heads, L, C // heads]"""
    b, l, c = x.data.shape
    if c % heads != 0:
        raise ShapeError(f"width {c} not divisible by {heads} heads")
    return x.reshape(b, l, heads, c // heads).transpose(0, 2, 1, 3)


def merge_heads(x):
    """[B, heads, L, head_dim] -> [B, L, heads * head_dim]"""
    b, h, l, d = x.data.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * d)


def scaled_similarity(q, k):
    """Per-head query/key dot products scaled by 1/sqrt(head_dim).

    q: [B, h, N, d], k: [B, h, L, d] -> [B, h, N, L].  This single tensor
    feeds both the attention softmax and the mask branch downstream.
    """
    head_dim = q.data.shape[-1]
    return (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(head_dim))


class Attention:
    """Multi-head attention with separate query and key/value inputs.

    Self-attention passes the same tensor for both.  Returns the merged
    output and the pre-softmax similarity so callers can reuse it.
    """

    def __init__(self, rng, dim, heads, name, dtype=np.float32):
        if dim % heads != 0:
            raise ShapeError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(rng, dim, dim, f"{name}.q", dtype)
        self.k = Linear(rng, dim, dim, f"{name}.k", dtype)
        self.v = Linear(rng, dim, dim, f"{name}.v", dtype)
        self.o = Linear(rng, dim, dim, f"{name}.o", dtype)

    def __call__(self, query_tokens, kv_tokens):
        q = split_heads(self.q(query_tokens), self.heads)  # [B, h, N, d]
        k = split_heads(self.k(kv_tokens), self.heads)  # [B, h, L, d]
        v = split_heads(self.v(kv_tokens), self.heads)  # [B, h, L, d]
        sim = scaled_similarity(q, k)  # [B, h, N, L]
        weights = softmax(sim, axis=-1)
        context = merge_heads(weights @ v)  # [B, N, C]
        return self.o(context), sim

    def parameters(self):
        return self.q.parameters() + self.k.parameters() + self.v.parameters() + self.o.parameters()


class MlpBlock:
    def __init__(self, rng, dim, hidden, name, dtype=np.float32):
        self.fc1 = Linear(rng, dim, hidden, f"{name}.fc1", dtype)
        self.fc2 = Linear(rng, hidden, dim, f"{name}.fc2", dtype)

    def __call__(self, x):
        return self.fc2(gelu(self.fc1(x)))

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters()


def subsample_grid(tokens, grid, stride):
    """Keep the top-left token of each stride x stride cell.

    tokens: [B, L, C] laid out row-major on ``grid``; returns the subsampled
    tokens and the reduced grid.
    """
    hp, wp = grid
    b, l, c = tokens.data.shape
    if hp * wp != l:
        raise ShapeError(f"grid {grid} does not cover {l} tokens")
    if hp % stride or wp % stride:
        raise ShapeError(f"grid {grid} not divisible by stride {stride}")
    picked = tokens.reshape(b, hp, wp, c)[:, ::stride, ::stride, :]
    new_grid = (hp // stride, wp // stride)
    return picked.reshape(b, new_grid[0] * new_grid[1], c), new_grid


class TransformerLayer:
    """Pre-norm encoder layer: x + attn(norm(x)), then x + mlp(norm(x)).

    With ``query_stride > 1`` the attention queries (and the residual stream)
    are the nearest-subsampled token grid while keys and values keep full
    resolution, so the layer downsamples the sequence by stride^2.
    """

    def __init__(self, rng, dim, heads, mlp_ratio, name, dtype=np.float32):
        self.ln1 = LayerNorm(dim, f"{name}.ln1", dtype)
        self.attn = Attention(rng, dim, heads, f"{name}.attn", dtype)
        self.ln2 = LayerNorm(dim, f"{name}.ln2", dtype)
        self.mlp = MlpBlock(rng, dim, mlp_ratio * dim, f"{name}.mlp", dtype)

    def __call__(self, x, grid=None, query_stride=1):
        normed = self.ln1(x)
        if query_stride == 1:
            attn_out, _ = self.attn(normed, normed)
            x = x + attn_out
            new_grid = grid
        else:
            if grid is None:
                raise ShapeError("query_stride > 1 needs the token grid")
            queries, new_grid = subsample_grid(normed, grid, query_stride)
            residual, _ = subsample_grid(x, grid, query_stride)
            attn_out, _ = self.attn(queries, normed)
            x = residual + attn_out
        x = x + self.mlp(self.ln2(x))
        return x, new_grid

    def parameters(self):
        return (
            self.ln1.parameters()
            + self.attn.parameters()
            + self.ln2.parameters()
            + self.mlp.parameters()
        )


class DecoderBlock:
    """Pre-norm decoder layer: self-attention over the queries, then
    cross-attention against a memory sequence, then an MLP.

    Returns the updated queries and the cross-attention similarity
    ``[B, h, N, L]``; the mask head downstream consumes the same similarity
    tensor that the attention softmax consumed.
    """

    def __init__(self, rng, dim, heads, mlp_ratio, name, dtype=np.float32):
        self.ln_self = LayerNorm(dim, f"{name}.ln_self", dtype)
        self.self_attn = Attention(rng, dim, heads, f"{name}.self_attn", dtype)
        self.ln_cross = LayerNorm(dim, f"{name}.ln_cross", dtype)
        self.cross_attn = Attention(rng, dim, heads, f"{name}.cross_attn", dtype)
        self.ln_mlp = LayerNorm(dim, f"{name}.ln_mlp", dtype)
        self.mlp = MlpBlock(rng, dim, mlp_ratio * dim, f"{name}.mlp", dtype)

    def __call__(self, queries, memory):
        normed = self.ln_self(queries)
        attn_out, _ = self.self_attn(normed, normed)
        queries = queries + attn_out
        cross_out, sim = self.cross_attn(self.ln_cross(queries), memory)
        queries = queries + cross_out
        queries = queries + self.mlp(self.ln_mlp(queries))
        return queries, sim

    def parameters(self):
        return (
            self.ln_self.parameters()
            + self.self_attn.parameters()
            + self.ln_cross.parameters()
            + self.cross_attn.parameters()
            + self.ln_mlp.parameters()
            + self.mlp.parameters()
        )
