"""Model and run configuration.

Configs live in a flat ``key = value`` text format with dotted keys, one per
line; ``#`` starts a comment.  Unknown keys are hard errors so typos cannot
silently fall back to defaults.  The same canonical serialization is embedded
in checkpoints and compared verbatim when one is loaded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .encoder import EncoderConfig
from .errors import ConfigError
from .losses import LossWeights
from .shrink import ShrinkConfig

__all__ = ["TrainConfig", "DataConfig", "ModelConfig", "parse_config", "load_config", "config_text"]


@dataclass
class TrainConfig:
    optimizer: str = "adamw"
    lr: float = 1e-4
    weight_decay: float = 1e-2
    iterations: int = 2000
    batch_size: int = 8
    seed: int = 0
    precision: str = "f32"
    log_interval: int = 50
    eval_interval: int = 500


@dataclass
class DataConfig:
    classes: int = 4
    image_size: int = 0  # 0 means: follow encoder.image_size
    min_shapes: int = 1
    max_shapes: int = 3
    noise_std: float = 4.0
    train_count: int = 2000
    eval_count: int = 200
    seed: int = 0

    def resolved_image_size(self, encoder_cfg):
        return self.image_size if self.image_size > 0 else encoder_cfg.image_size[0]


@dataclass
class ModelConfig:
    encoder: EncoderConfig
    cascade_layers: list[int] = field(default_factory=lambda: [2, 3, 4])
    shrink_enabled: bool = False
    shrink: ShrinkConfig = field(default_factory=ShrinkConfig)
    decoder_mlp_ratio: int = 4
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        depth = self.encoder.depth
        layers = list(self.cascade_layers)
        if not layers:
            raise ConfigError("cascade.layers must name at least one encoder layer")
        if any(not 1 <= l <= depth for l in layers):
            raise ConfigError(f"cascade.layers {layers} outside [1, {depth}]")
        if any(b <= a for a, b in zip(layers, layers[1:])):
            raise ConfigError(f"cascade.layers {layers} must be strictly increasing")
        if self.data.classes < 2:
            raise ConfigError(f"data.classes must be at least 2, got {self.data.classes}")
        if self.decoder_mlp_ratio < 1:
            raise ConfigError(f"decoder.mlp_ratio must be at least 1, got {self.decoder_mlp_ratio}")
        if self.train.precision not in ("f32", "f64"):
            raise ConfigError(f"train.precision must be f32 or f64, got {self.train.precision!r}")
        if self.train.optimizer != "adamw":
            raise ConfigError(f"unsupported optimizer {self.train.optimizer!r}")
        if self.train.batch_size < 1 or self.train.iterations < 0:
            raise ConfigError("train.batch_size must be positive and train.iterations non-negative")
        if self.data.min_shapes < 0 or self.data.max_shapes < self.data.min_shapes:
            raise ConfigError(
                f"shape count range [{self.data.min_shapes}, {self.data.max_shapes}] is empty"
            )
        if self.shrink_enabled:
            self.shrink.resolve(depth)
        size = self.data.resolved_image_size(self.encoder)
        if size % self.encoder.patch_size:
            raise ConfigError(
                f"data.image_size {size} not divisible by patch size {self.encoder.patch_size}"
            )


def _parse_bool(text):
    lowered = text.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text):
    return [int(part) for part in text.split(",") if part.strip()]


def _fmt_int_list(values):
    return ",".join(str(v) for v in values)


def _fmt_bool(value):
    return "true" if value else "false"


# key -> (parser, formatter, default)
_SCHEMA = {
    "encoder.image_size": (int, str, 32),
    "encoder.patch_size": (int, str, 4),
    "encoder.depth": (int, str, 4),
    "encoder.width": (int, str, 64),
    "encoder.heads": (int, str, 4),
    "encoder.mlp_ratio": (int, str, 4),
    "decoder.mlp_ratio": (int, str, 4),
    "cascade.layers": (_parse_int_list, _fmt_int_list, [2, 3, 4]),
    "shrunk.enabled": (_parse_bool, _fmt_bool, False),
    "shrunk.qd_layer": (int, str, 0),
    "shrunk.naive": (_parse_bool, _fmt_bool, False),
    "loss.focal_weight": (float, repr, 20.0),
    "loss.dice_weight": (float, repr, 1.0),
    "loss.no_object_weight": (float, repr, 0.1),
    "loss.focal_gamma": (float, repr, 2.0),
    "loss.focal_alpha": (float, repr, 0.25),
    "train.optimizer": (str, str, "adamw"),
    "train.lr": (float, repr, 1e-4),
    "train.weight_decay": (float, repr, 1e-2),
    "train.iterations": (int, str, 2000),
    "train.batch_size": (int, str, 8),
    "train.seed": (int, str, 0),
    "train.precision": (str, str, "f32"),
    "train.log_interval": (int, str, 50),
    "train.eval_interval": (int, str, 500),
    "data.classes": (int, str, 4),
    "data.image_size": (int, str, 0),
    "data.min_shapes": (int, str, 1),
    "data.max_shapes": (int, str, 3),
    "data.noise_std": (float, repr, 4.0),
    "data.train_count": (int, str, 2000),
    "data.eval_count": (int, str, 200),
    "data.seed": (int, str, 0),
}


def _parse_pairs(text, source="config"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        parser = _SCHEMA[key][0]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def _build(values):
    def get(key):
        return values.get(key, _SCHEMA[key][2])

    encoder = EncoderConfig(
        image_size=get("encoder.image_size"),
        patch_size=get("encoder.patch_size"),
        depth=get("encoder.depth"),
        width=get("encoder.width"),
        heads=get("encoder.heads"),
        mlp_ratio=get("encoder.mlp_ratio"),
    )
    return ModelConfig(
        encoder=encoder,
        cascade_layers=list(get("cascade.layers")),
        shrink_enabled=get("shrunk.enabled"),
        shrink=ShrinkConfig(qd_layer=get("shrunk.qd_layer"), naive=get("shrunk.naive")),
        decoder_mlp_ratio=get("decoder.mlp_ratio"),
        loss=LossWeights(
            focal=get("loss.focal_weight"),
            dice=get("loss.dice_weight"),
            no_object=get("loss.no_object_weight"),
            focal_gamma=get("loss.focal_gamma"),
            focal_alpha=get("loss.focal_alpha"),
        ),
        train=TrainConfig(
            optimizer=get("train.optimizer"),
            lr=get("train.lr"),
            weight_decay=get("train.weight_decay"),
            iterations=get("train.iterations"),
            batch_size=get("train.batch_size"),
            seed=get("train.seed"),
            precision=get("train.precision"),
            log_interval=get("train.log_interval"),
            eval_interval=get("train.eval_interval"),
        ),
        data=DataConfig(
            classes=get("data.classes"),
            image_size=get("data.image_size"),
            min_shapes=get("data.min_shapes"),
            max_shapes=get("data.max_shapes"),
            noise_std=get("data.noise_std"),
            train_count=get("data.train_count"),
            eval_count=get("data.eval_count"),
            seed=get("data.seed"),
        ),
    )


def parse_config(text, overrides=(), source="config"):
    """Build a ModelConfig from config text plus ``key=value`` override strings."""
    values = _parse_pairs(text, source)
    for item in overrides:
        values.update(_parse_pairs(item, source="override"))
    return _build(values)


def load_config(path, overrides=()):
    with open(path, "r", encoding="ascii") as fh:
        return parse_config(fh.read(), overrides, source=str(path))


def config_text(cfg: ModelConfig):
    """Canonical serialization: every key, sorted, one per line."""
    enc = cfg.encoder
    if enc.image_size[0] != enc.image_size[1]:
        raise ConfigError("only square image sizes serialize to config text")
    values = {
        "encoder.image_size": enc.image_size[0],
        "encoder.patch_size": enc.patch_size,
        "encoder.depth": enc.depth,
        "encoder.width": enc.width,
        "encoder.heads": enc.heads,
        "encoder.mlp_ratio": enc.mlp_ratio,
        "decoder.mlp_ratio": cfg.decoder_mlp_ratio,
        "cascade.layers": cfg.cascade_layers,
        "shrunk.enabled": cfg.shrink_enabled,
        "shrunk.qd_layer": cfg.shrink.qd_layer,
        "shrunk.naive": cfg.shrink.naive,
        "loss.focal_weight": cfg.loss.focal,
        "loss.dice_weight": cfg.loss.dice,
        "loss.no_object_weight": cfg.loss.no_object,
        "loss.focal_gamma": cfg.loss.focal_gamma,
        "loss.focal_alpha": cfg.loss.focal_alpha,
        "train.optimizer": cfg.train.optimizer,
        "train.lr": cfg.train.lr,
        "train.weight_decay": cfg.train.weight_decay,
        "train.iterations": cfg.train.iterations,
        "train.batch_size": cfg.train.batch_size,
        "train.seed": cfg.train.seed,
        "train.precision": cfg.train.precision,
        "train.log_interval": cfg.train.log_interval,
        "train.eval_interval": cfg.train.eval_interval,
        "data.classes": cfg.data.classes,
        "data.image_size": cfg.data.image_size,
        "data.min_shapes": cfg.data.min_shapes,
        "data.max_shapes": cfg.data.max_shapes,
        "data.noise_std": cfg.data.noise_std,
        "data.train_count": cfg.data.train_count,
        "data.eval_count": cfg.data.eval_count,
        "data.seed": cfg.data.seed,
    }
    lines = []
    for key in sorted(values):
        formatter = _SCHEMA[key][1]
        lines.append(f"{key} = {formatter(values[key])}")
    return "\n".join(lines) + "\n"
