"""Training loop: optimizer math, batch sampling, determinism, and resume."""

from dataclasses import replace

import numpy as np
import pytest

from attnseg.checkpoint import load_checkpoint
from attnseg.config import config_text, parse_config
from attnseg.data import generate_dataset
from attnseg.errors import CheckpointError, ConfigError, NumericsError
from attnseg.tensor import Parameter
from attnseg.train import AdamW, _batch_indices, _trajectory_key, load_model, train

TINY = (
    "encoder.image_size=16",
    "encoder.patch_size=4",
    "encoder.depth=2",
    "encoder.width=16",
    "encoder.heads=2",
    "encoder.mlp_ratio=2",
    "decoder.mlp_ratio=2",
    "cascade.layers=1,2",
    "data.classes=3",
    "data.train_count=12",
    "data.eval_count=4",
    "train.batch_size=4",
    "train.iterations=6",
    "train.log_interval=2",
    "train.eval_interval=3",
)


def tiny_cfg(*extra):
    return parse_config("", overrides=TINY + extra, source="test")


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinyds")
    cfg = tiny_cfg()
    data_cfg = replace(cfg.data, image_size=cfg.data.resolved_image_size(cfg.encoder))
    generate_dataset(root, data_cfg.train_count, data_cfg, data_cfg.seed, "train")
    generate_dataset(root, data_cfg.eval_count, data_cfg, data_cfg.seed, "eval")
    return root


# ---- optimizer -----------------------------------------------------------------


def test_adamw_single_step_closed_form():
    p = Parameter(np.array([2.0], dtype=np.float64), "x.bias")
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    p.grad = np.array([0.5])
    opt.step()
    # First step: m-hat = g, v-hat = g*g, update = g / (|g| + eps) ~ 1.
    expected = 2.0 - 0.1 * (0.5 / (0.5 + 1e-8))
    assert abs(p.data[0] - expected) < 1e-12


def test_adamw_two_steps_match_manual_recurrence():
    rng = np.random.default_rng(0)
    value = rng.normal(size=(3, 2))
    grads = [rng.normal(size=(3, 2)) for _ in range(2)]
    p = Parameter(value.copy(), "layer.weight")
    opt = AdamW([p], lr=0.01, weight_decay=0.02)

    x = value.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t, g in enumerate(grads, start=1):
        p.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1.0 - 0.9**t)
        vh = v / (1.0 - 0.999**t)
        x = x - 0.01 * (mh / (np.sqrt(vh) + 1e-8) + 0.02 * x)
        assert np.allclose(p.data, x, atol=1e-12)


def test_weight_decay_applies_only_to_weight_matrices():
    w = Parameter(np.array([1.0]), "a.weight")
    b = Parameter(np.array([1.0]), "a.bias")
    g = Parameter(np.array([1.0]), "a.gamma")
    opt = AdamW([w, b, g], lr=0.0, weight_decay=0.5)
    for p in (w, b, g):
        p.grad = np.array([1.0])
    opt.step()  # lr 0: nothing may move, decay included (it is scaled by lr)
    assert w.data[0] == b.data[0] == g.data[0] == 1.0

    opt = AdamW([w, b, g], lr=0.1, weight_decay=0.5)
    for p in (w, b, g):
        p.grad = np.array([0.0])
    opt.step()  # zero grads: only the decay term can move parameters
    assert w.data[0] == pytest.approx(1.0 - 0.1 * 0.5)
    assert b.data[0] == 1.0
    assert g.data[0] == 1.0


def test_adamw_skips_parameters_without_grads():
    p = Parameter(np.array([1.0]), "x.bias")
    opt = AdamW([p], lr=0.1)
    p.grad = None
    opt.step()
    assert p.data[0] == 1.0


def test_zero_grad_clears_everything():
    p = Parameter(np.array([1.0]), "x.bias")
    p.grad = np.array([3.0])
    AdamW([p]).zero_grad()
    assert p.grad is None


def test_optimizer_state_round_trip():
    rng = np.random.default_rng(1)
    params = [Parameter(rng.normal(size=(2, 2)), f"p{i}.weight") for i in range(2)]
    opt = AdamW(params, lr=0.01)
    for _ in range(3):
        for p in params:
            p.grad = rng.normal(size=p.data.shape)
        opt.step()
    records = opt.state_records()
    assert records["optim.step"][0] == 3

    fresh = AdamW(params, lr=0.01)
    fresh.load_state(records)
    assert fresh.step_count == 3
    for a, b in zip(fresh.m, opt.m):
        assert np.array_equal(a, b)
    with pytest.raises(CheckpointError):
        AdamW(params).load_state({})
    bad = dict(records)
    del bad["optim.m.p1.weight"]
    with pytest.raises(CheckpointError):
        AdamW(params).load_state(bad)


# ---- batch sampling -------------------------------------------------------------


def test_batch_indices_are_deterministic_and_depend_on_iteration():
    a = _batch_indices(0, 5, population=100, batch_size=8)
    b = _batch_indices(0, 5, population=100, batch_size=8)
    c = _batch_indices(0, 6, population=100, batch_size=8)
    d = _batch_indices(1, 5, population=100, batch_size=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    assert len(set(a.tolist())) == 8  # sampled without replacement


def test_batch_indices_with_tiny_population():
    idx = _batch_indices(0, 0, population=3, batch_size=8)
    assert len(idx) == 8
    assert idx.max() < 3


def test_trajectory_key_ignores_iteration_budget_only():
    cfg_a = config_text(tiny_cfg())
    cfg_b = config_text(tiny_cfg("train.iterations=60"))
    cfg_c = config_text(tiny_cfg("train.lr=0.5"))
    assert _trajectory_key(cfg_a) == _trajectory_key(cfg_b)
    assert _trajectory_key(cfg_a) != _trajectory_key(cfg_c)


# ---- the loop -------------------------------------------------------------------


def test_loss_decreases_and_artifacts_are_written(tiny_data, tmp_path):
    cfg = tiny_cfg("train.iterations=40", "train.eval_interval=10")
    out = tmp_path / "m.ckpt"
    metrics = tmp_path / "m.metrics"
    result = train(cfg, tiny_data, out, metrics_path=metrics)
    assert result.iterations == 40
    assert out.exists() and metrics.exists()

    lines = metrics.read_text().splitlines()
    losses = {}
    for line in lines:
        fields = dict(part.split("=", 1) for part in line.split())
        if "total" in fields:
            losses[int(fields["iter"])] = float(fields["total"])
    assert losses[40] < losses[2]  # learning happened
    assert result.final_loss == losses[40]

    data = load_checkpoint(out)
    assert data.iteration == 40
    assert data.config_text == config_text(cfg)
    assert "optim.step" in data.records
    assert any(line.startswith("iter=40 train_miou=") for line in lines)


def test_training_is_bitwise_deterministic(tiny_data, tmp_path):
    cfg = tiny_cfg()
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    ma, mb = tmp_path / "a.metrics", tmp_path / "b.metrics"
    train(cfg, tiny_data, a, metrics_path=ma)
    train(cfg, tiny_data, b, metrics_path=mb)
    assert a.read_bytes() == b.read_bytes()
    assert ma.read_text() == mb.read_text()


def test_seed_changes_the_trajectory(tiny_data, tmp_path):
    a = tmp_path / "a.ckpt"
    b = tmp_path / "b.ckpt"
    train(tiny_cfg(), tiny_data, a)
    train(tiny_cfg("train.seed=1"), tiny_data, b)
    assert a.read_bytes() != b.read_bytes()


def test_resume_matches_uninterrupted_run_bitwise(tiny_data, tmp_path):
    full_ckpt = tmp_path / "full.ckpt"
    train(tiny_cfg("train.iterations=8"), tiny_data, full_ckpt)

    half_ckpt = tmp_path / "half.ckpt"
    train(tiny_cfg("train.iterations=4"), tiny_data, half_ckpt)
    resumed_ckpt = tmp_path / "resumed.ckpt"
    train(tiny_cfg("train.iterations=8"), tiny_data, resumed_ckpt, resume=half_ckpt)
    assert resumed_ckpt.read_bytes() == full_ckpt.read_bytes()


def test_resume_rejects_mismatched_trajectory(tiny_data, tmp_path):
    ckpt = tmp_path / "x.ckpt"
    train(tiny_cfg("train.iterations=2"), tiny_data, ckpt)
    with pytest.raises(CheckpointError):
        train(tiny_cfg("train.iterations=4", "train.lr=0.5"), tiny_data, tmp_path / "y.ckpt", resume=ckpt)
    with pytest.raises(ConfigError):  # budget already exhausted
        train(tiny_cfg("train.iterations=1"), tiny_data, tmp_path / "z.ckpt", resume=ckpt)


def test_load_model_rebuilds_from_embedded_config(tiny_data, tmp_path):
    ckpt = tmp_path / "m.ckpt"
    cfg = tiny_cfg("train.iterations=2")
    train(cfg, tiny_data, ckpt)
    model, loaded_cfg, data = load_model(ckpt)
    assert config_text(loaded_cfg) == config_text(cfg)
    assert data.iteration == 2
    images = np.random.default_rng(2).integers(0, 256, size=(1, 16, 16, 3), dtype=np.uint8)
    preds = model.infer_batch(images)
    assert preds.shape == (1, 16, 16)
    assert preds.max() < cfg.data.classes


def test_divergence_aborts_with_iteration_number(tiny_data, tmp_path):
    cfg = tiny_cfg("train.lr=1e8", "train.iterations=30")
    with np.errstate(all="ignore"):  # the blow-up itself is the point
        with pytest.raises(NumericsError) as err:
            train(cfg, tiny_data, tmp_path / "d.ckpt")
    assert "diverged at iteration" in str(err.value)


def test_dataset_size_mismatch_is_rejected(tiny_data, tmp_path):
    with pytest.raises(ConfigError) as err:
        train(tiny_cfg("data.train_count=999"), tiny_data, tmp_path / "m.ckpt")
    assert "999" in str(err.value)
    with pytest.raises(ConfigError) as err:  # wrong pixel size, same data dir
        train(
            tiny_cfg("encoder.image_size=32", "data.train_count=12"),
            tiny_data,
            tmp_path / "m.ckpt",
        )
    assert "px" in str(err.value)
