"""Encoder: patch extraction against a per-patch loop, attention against an
explicit single-head loop, residual identities, and determinism."""

import numpy as np
import pytest

from attnseg.encoder import EncoderConfig, PatchEmbed, VitEncoder, _extract_patches
from attnseg.errors import ConfigError, ShapeError
from attnseg.layers import Attention, scaled_similarity, split_heads, subsample_grid
from attnseg.tensor import Tensor, softmax


def toy_config(**overrides):
    kw = dict(image_size=32, patch_size=4, depth=4, width=64, heads=4, mlp_ratio=4)
    kw.update(overrides)
    return EncoderConfig(**kw)


def test_grid_and_sequence_length():
    cfg = toy_config()
    assert cfg.grid == (8, 8)
    assert cfg.seq_len == 64
    assert cfg.patch_dim == 48
    large = EncoderConfig(image_size=640, patch_size=16, depth=24, width=1024, heads=16)
    assert large.seq_len == 1600


def test_config_validation():
    with pytest.raises(ConfigError):
        toy_config(image_size=30)  # not divisible by patch size
    with pytest.raises(ConfigError):
        toy_config(width=65)  # not divisible by heads
    with pytest.raises(ConfigError):
        toy_config(depth=0)


def test_patch_extraction_matches_per_patch_loop():
    rng = np.random.default_rng(0)
    images = rng.normal(size=(2, 8, 8, 3))
    p = 4
    flat = _extract_patches(images, p)
    assert flat.shape == (2, 4, 48)
    for b in range(2):
        idx = 0
        for i in range(2):
            for j in range(2):
                patch = images[b, i * p : (i + 1) * p, j * p : (j + 1) * p, :]
                assert np.array_equal(flat[b, idx], patch.reshape(-1))
                idx += 1


def test_patch_embed_matches_manual_projection():
    cfg = toy_config(image_size=8, depth=1)
    rng = np.random.default_rng(1)
    embed = PatchEmbed(cfg, rng, dtype=np.float64)
    images = np.random.default_rng(2).normal(size=(1, 8, 8, 3))
    seq = embed(images)
    flat = _extract_patches(images, cfg.patch_size)
    expected = flat[0] @ embed.proj.weight.data + embed.proj.bias.data + embed.pos.data
    assert np.allclose(seq.tokens.data[0], expected, atol=1e-12)
    assert seq.grid == (2, 2)
    assert seq.source_layer == 0


def test_single_head_attention_matches_explicit_loop():
    rng = np.random.default_rng(3)
    attn = Attention(rng, dim=8, heads=1, name="t", dtype=np.float64)
    x = np.random.default_rng(4).normal(size=(1, 5, 8))
    out, sim = attn(Tensor(x), Tensor(x))

    q = x[0] @ attn.q.weight.data + attn.q.bias.data
    k = x[0] @ attn.k.weight.data + attn.k.bias.data
    v = x[0] @ attn.v.weight.data + attn.v.bias.data
    scores = np.zeros((5, 5))
    for i in range(5):
        for j in range(5):
            scores[i, j] = q[i] @ k[j] / np.sqrt(8.0)
    weights = np.exp(scores - scores.max(axis=1, keepdims=True))
    weights /= weights.sum(axis=1, keepdims=True)
    context = weights @ v
    expected = context @ attn.o.weight.data + attn.o.bias.data

    assert np.allclose(sim.data[0, 0], scores, atol=1e-10)
    assert np.allclose(out.data[0], expected, atol=1e-10)


def test_multi_head_attention_reduces_to_per_head_computation():
    rng = np.random.default_rng(5)
    attn = Attention(rng, dim=8, heads=2, name="t", dtype=np.float64)
    x = np.random.default_rng(6).normal(size=(1, 4, 8))
    _, sim = attn(Tensor(x), Tensor(x))
    q = x[0] @ attn.q.weight.data + attn.q.bias.data
    k = x[0] @ attn.k.weight.data + attn.k.bias.data
    for h in range(2):
        qh, kh = q[:, h * 4 : (h + 1) * 4], k[:, h * 4 : (h + 1) * 4]
        assert np.allclose(sim.data[0, h], qh @ kh.T / 2.0, atol=1e-10)


def test_zeroed_sublayers_make_each_layer_the_identity():
    cfg = toy_config()
    rng = np.random.default_rng(7)
    enc = VitEncoder(cfg, rng, dtype=np.float64)
    for layer in enc.layers:
        for p in layer.attn.parameters() + layer.mlp.parameters():
            p.data = np.zeros_like(p.data)
    images = np.random.default_rng(8).normal(size=(1, 32, 32, 3))
    features = enc.encode(images)
    tokens0 = enc.patchify(images).tokens.data
    for f in features:
        assert np.allclose(f.tokens.data, tokens0, atol=1e-12)


def test_encode_returns_one_feature_per_layer_at_constant_grid():
    cfg = toy_config()
    enc = VitEncoder(cfg, np.random.default_rng(9))
    images = np.random.default_rng(10).normal(size=(2, 32, 32, 3)).astype(np.float32)
    features = enc.encode(images)
    assert len(features) == cfg.depth
    assert [f.source_layer for f in features] == [1, 2, 3, 4]
    for f in features:
        assert f.tokens.shape == (2, 64, 64)
        assert f.grid == (8, 8)


def test_encoder_is_deterministic_per_seed():
    cfg = toy_config()
    images = np.random.default_rng(11).normal(size=(1, 32, 32, 3)).astype(np.float32)
    out = []
    for _ in range(2):
        enc = VitEncoder(cfg, np.random.default_rng(42))
        out.append(enc.encode(images)[-1].tokens.data)
    assert np.array_equal(out[0], out[1])
    other = VitEncoder(cfg, np.random.default_rng(43)).encode(images)[-1].tokens.data
    assert not np.array_equal(out[0], other)


def test_shared_final_norm_is_a_single_module():
    cfg = toy_config()
    enc = VitEncoder(cfg, np.random.default_rng(12), dtype=np.float64)
    images = np.random.default_rng(13).normal(size=(1, 32, 32, 3))
    features = enc.encode(images)
    a = enc.normalized(features[0])
    b = enc.normalized(features[-1])
    # Same gamma/beta parameters applied to both features.
    gammas = [p for p in enc.parameters() if p.name == "encoder.norm.gamma"]
    assert len(gammas) == 1
    for seq in (a, b):
        mu = seq.tokens.data.mean(axis=-1)
        assert np.allclose(mu, 0.0, atol=1e-6)  # gamma=1, beta=0 at init


def test_parameter_names_are_unique_and_dotted():
    enc = VitEncoder(toy_config(), np.random.default_rng(14))
    names = [p.name for p in enc.parameters()]
    assert len(names) == len(set(names))
    assert "encoder.layers.0.attn.q.weight" in names
    assert "encoder.pos_embed" in names


def test_subsample_grid_keeps_top_left_of_each_cell():
    tokens = Tensor(np.arange(16, dtype=np.float64).reshape(1, 16, 1))
    picked, grid = subsample_grid(tokens, (4, 4), 2)
    assert grid == (2, 2)
    assert picked.data.reshape(-1).tolist() == [0.0, 2.0, 8.0, 10.0]
    with pytest.raises(ShapeError):
        subsample_grid(Tensor(np.zeros((1, 9, 1))), (3, 3), 2)


def test_images_must_match_configured_size():
    enc = VitEncoder(toy_config(), np.random.default_rng(15))
    with pytest.raises(ShapeError):
        enc.encode(np.zeros((1, 16, 16, 3), dtype=np.float32))


def test_attention_gradients_flow_to_all_projections():
    rng = np.random.default_rng(16)
    attn = Attention(rng, dim=8, heads=2, name="t", dtype=np.float64)
    x = Tensor(np.random.default_rng(17).normal(size=(1, 3, 8)), requires_grad=True)
    out, sim = attn(x, x)
    (out * out).sum().backward()
    for p in attn.parameters():
        assert p.grad is not None and np.any(p.grad != 0.0), p.name
    assert x.grad is not None


def test_similarity_is_used_by_softmax_and_returned_unchanged():
    rng = np.random.default_rng(18)
    attn = Attention(rng, dim=4, heads=1, name="t", dtype=np.float64)
    x = Tensor(np.random.default_rng(19).normal(size=(1, 3, 4)))
    out, sim = attn(x, x)
    q = split_heads(Tensor(x.data @ attn.q.weight.data + attn.q.bias.data), 1)
    k = split_heads(Tensor(x.data @ attn.k.weight.data + attn.k.bias.data), 1)
    again = scaled_similarity(q, k)
    assert np.allclose(sim.data, again.data, atol=1e-12)
    probs = softmax(sim, axis=-1).data
    assert np.allclose(probs.sum(axis=-1), 1.0)
