"""Full segmentation model: encoder, optional shrunk path, mask decoder.

The decoder consumes the selected backbone layers deepest-first in the plain
cascade.  With the shrunk path enabled the decoder instead runs a single
stage on the query-upsampled feature (or, in the naive variant, directly on
the quarter-resolution feature).  Every feature handed to the decoder passes
the encoder's shared final layer norm.

Inference upsamples the final cumulative mask logits bilinearly to pixel
resolution, applies the sigmoid, and takes the per-pixel argmax of
class probability times mask probability.
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .data import to_model_input
from .decoder import MaskDecoder, semantic_inference
from .encoder import VitEncoder
from .errors import ConfigError, ShapeError
from .interpolate import bilinear_matrix
from .losses import BatchTargets, total_loss
from .shrink import QueryUpsampler, encode_shrunk
from .tensor import Tensor, no_grad

__all__ = ["SegmentationModel"]


class SegmentationModel:
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.float32 if cfg.train.precision == "f32" else np.float64
        rng = np.random.default_rng(np.random.SeedSequence((cfg.train.seed, 0)))

        self.encoder = VitEncoder(cfg.encoder, rng, self.dtype)
        if cfg.shrink_enabled:
            qd = cfg.shrink.resolve(cfg.encoder.depth)
            if qd < cfg.encoder.depth:
                cfg.shrink.validate_grid(cfg.encoder.grid)
            stages = 1
            self.upsampler = (
                None
                if cfg.shrink.naive
                else QueryUpsampler(
                    rng, cfg.encoder.grid, cfg.encoder.width, cfg.encoder.heads,
                    cfg.decoder_mlp_ratio, self.dtype,
                )
            )
        else:
            stages = len(cfg.cascade_layers)
            self.upsampler = None
        self.decoder = MaskDecoder(
            rng,
            num_classes=cfg.data.classes,
            dim=cfg.encoder.width,
            heads=cfg.encoder.heads,
            mlp_ratio=cfg.decoder_mlp_ratio,
            num_stages=stages,
            dtype=self.dtype,
        )

        self._params = self._collect_parameters()
        self._upsample_cache = {}

    def _collect_parameters(self):
        params = self.encoder.parameters()
        if self.upsampler is not None:
            params += self.upsampler.parameters()
        params += self.decoder.parameters()
        seen = {}
        for p in params:
            if p.name in seen:
                raise ConfigError(f"duplicate parameter name {p.name!r}")
            seen[p.name] = p
        return params

    def parameters(self):
        return list(self._params)

    def parameter_dict(self):
        return {p.name: p for p in self._params}

    # ---- forward paths ----------------------------------------------------

    def decoder_features(self, images):
        """The normalized token sequences the decoder will consume."""
        if not self.cfg.shrink_enabled:
            features = self.encoder.encode(images)
            selected = [features[layer - 1] for layer in reversed(self.cfg.cascade_layers)]
            return [self.encoder.normalized(f) for f in selected]
        _, pre_qd, final = encode_shrunk(self.encoder, self.cfg.shrink, images)
        if self.upsampler is None:  # naive: quarter resolution straight in
            return [self.encoder.normalized(final)]
        return [
            self.upsampler(self.encoder.normalized(pre_qd), self.encoder.normalized(final))
        ]

    def forward(self, images):
        """Images (uint8 or [-1, 1] float, [H, W, 3] or [B, H, W, 3]) to the
        per-stage decoder outputs."""
        arr = np.asarray(images)
        if arr.dtype == np.uint8:
            arr = to_model_input(arr)
        return self.decoder(self.decoder_features(arr.astype(self.dtype)))

    # ---- training ------------------------------------------------------------

    def _upsample_matrix(self, grid, out_size):
        key = (grid, out_size)
        if key not in self._upsample_cache:
            matrix = bilinear_matrix(grid, (out_size, out_size)).T  # [L, HW]
            self._upsample_cache[key] = Tensor(matrix.astype(self.dtype))
        return self._upsample_cache[key]

    def loss_on_batch(self, images, labels, targets=None):
        """Total loss and per-term breakdown for one batch."""
        labels = np.asarray(labels)
        if labels.ndim == 2:
            labels = labels[None]
        out_size = labels.shape[-1]
        if labels.shape[-2] != out_size:
            raise ShapeError(f"label maps must be square, got {labels.shape}")
        if targets is None:
            targets = BatchTargets.from_label_maps(
                labels, self.cfg.data.classes, self.cfg.loss.no_object, dtype=self.dtype
            )
        stages = self.forward(images)
        pairs = []
        for stage in stages:
            lift = self._upsample_matrix(stage.grid, out_size)
            pairs.append((stage.class_logits, stage.cumulative_logits @ lift))
        return total_loss(pairs, targets, self.cfg.loss)

    # ---- inference -------------------------------------------------------------

    def infer_batch(self, images):
        """Predicted label maps [B, H, W] (int64) at label resolution."""
        arr = np.asarray(images)
        single = arr.ndim == 3
        with no_grad():
            stages = self.forward(images)
        final = stages[-1]
        out_size = self.cfg.data.resolved_image_size(self.cfg.encoder)
        lift = self._upsample_matrix(final.grid, out_size).data
        logits = (final.cumulative_logits.data @ lift).astype(np.float64)  # [B, N, HW]
        b, n, _ = logits.shape
        z = np.exp(-np.abs(logits))
        masks = np.where(logits >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
        masks = masks.reshape(b, n, out_size, out_size)
        class_logits = final.class_logits.data
        labels = np.stack(
            [semantic_inference(class_logits[i], masks[i]) for i in range(b)]
        )
        return labels[0] if single else labels

    def infer(self, image):
        return self.infer_batch(image)

    # ---- checkpoint plumbing ------------------------------------------------------

    def state_records(self):
        return {p.name: p.data.copy() for p in self._params}

    def load_state(self, records):
        own = self.parameter_dict()
        missing = [name for name in own if name not in records]
        if missing:
            raise ConfigError(f"checkpoint is missing parameters: {missing[:3]}...")
        for name, param in own.items():
            value = np.asarray(records[name])
            if value.shape != param.data.shape:
                raise ConfigError(
                    f"checkpoint parameter {name} has shape {value.shape}, expected {param.data.shape}"
                )
            param.data = value.astype(param.data.dtype, copy=True)
            param.grad = None
