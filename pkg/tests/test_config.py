"""Config parsing, canonical serialization, and validation."""

import pytest

from attnseg.config import config_text, load_config, parse_config
from attnseg.errors import ConfigError


def test_empty_text_gives_defaults():
    cfg = parse_config("")
    assert cfg.encoder.depth == 4
    assert cfg.encoder.width == 64
    assert cfg.cascade_layers == [2, 3, 4]
    assert cfg.shrink_enabled is False
    assert cfg.train.lr == 1e-4
    assert cfg.train.weight_decay == 1e-2
    assert cfg.loss.focal == 20.0
    assert cfg.data.classes == 4


def test_round_trip_is_a_fixed_point():
    cfg = parse_config("")
    text = config_text(cfg)
    again = config_text(parse_config(text))
    assert text == again
    lines = text.splitlines()
    assert lines == sorted(lines)
    assert all(" = " in line for line in lines)
    assert len(lines) == 33  # every key, exactly once


def test_parsing_values_comments_and_blank_lines():
    cfg = parse_config(
        """
        # a comment
        encoder.depth = 6
        cascade.layers = 1,3,5   # trailing comment
        shrunk.enabled = yes
        shrunk.qd_layer = 2
        train.lr = 3e-4
        """
    )
    assert cfg.encoder.depth == 6
    assert cfg.cascade_layers == [1, 3, 5]
    assert cfg.shrink_enabled is True
    assert cfg.shrink.qd_layer == 2
    assert cfg.train.lr == 3e-4


def test_unknown_key_names_source_and_line():
    with pytest.raises(ConfigError) as err:
        parse_config("\nencoder.depht = 4\n", source="bad.cfg")
    assert "bad.cfg:2" in str(err.value)
    assert "encoder.depht" in str(err.value)


def test_bad_values_name_source_and_line():
    with pytest.raises(ConfigError) as err:
        parse_config("encoder.depth = four", source="x.cfg")
    assert "x.cfg:1" in str(err.value)
    with pytest.raises(ConfigError):
        parse_config("shrunk.enabled = maybe")
    with pytest.raises(ConfigError):
        parse_config("just some words")


def test_overrides_win_over_text():
    cfg = parse_config("encoder.depth = 6", overrides=("encoder.depth=8",))
    assert cfg.encoder.depth == 8
    with pytest.raises(ConfigError) as err:
        parse_config("", overrides=("nope=1",))
    assert "override" in str(err.value)


def test_validation_rejects_inconsistent_configs():
    with pytest.raises(ConfigError):
        parse_config("cascade.layers = ")
    with pytest.raises(ConfigError):
        parse_config("cascade.layers = 2,2")
    with pytest.raises(ConfigError):
        parse_config("cascade.layers = 3,2")
    with pytest.raises(ConfigError):
        parse_config("cascade.layers = 5")  # beyond depth 4
    with pytest.raises(ConfigError):
        parse_config("data.classes = 1")
    with pytest.raises(ConfigError):
        parse_config("train.precision = f16")
    with pytest.raises(ConfigError):
        parse_config("train.optimizer = sgd")
    with pytest.raises(ConfigError):
        parse_config("encoder.image_size = 30")  # not divisible by patch 4
    with pytest.raises(ConfigError):
        parse_config("data.min_shapes = 3\ndata.max_shapes = 1")
    with pytest.raises(ConfigError):
        parse_config("shrunk.enabled = true\nshrunk.qd_layer = 9")


def test_floats_serialize_with_full_precision():
    cfg = parse_config("train.lr = 0.0001\nloss.focal_alpha = 0.25")
    text = config_text(cfg)
    assert "train.lr = 0.0001" in text
    assert "loss.focal_alpha = 0.25" in text
    assert parse_config(text).train.lr == cfg.train.lr


def test_shipped_configs_parse(tmp_path):
    for name in (
        "configs/toy.cfg",
        "configs/toy_single.cfg",
        "configs/toy_shrunk.cfg",
        "configs/toy_shrunk_naive.cfg",
        "configs/vit_large_640.cfg",
        "configs/vit_large_640_shrunk.cfg",
    ):
        cfg = load_config(name)
        assert config_text(parse_config(config_text(cfg))) == config_text(cfg)
    missing = tmp_path / "nope.cfg"
    with pytest.raises(OSError):
        load_config(missing)


def test_data_image_size_follows_encoder_by_default():
    cfg = parse_config("encoder.image_size = 64")
    assert cfg.data.resolved_image_size(cfg.encoder) == 64
    cfg = parse_config("encoder.image_size = 64\ndata.image_size = 32")
    assert cfg.data.resolved_image_size(cfg.encoder) == 32
