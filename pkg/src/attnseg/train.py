"""Training loop and optimizer.

The optimizer is Adam with decoupled weight decay; decay applies only to
projection weight matrices (parameter names ending in ``.weight``), never to
biases, norms or embeddings.

Determinism: parameter init derives from (seed, 0) and the batch selection
for iteration i from (seed, 1, i), so training is a pure function of (config,
dataset) and can resume from a checkpoint mid-run onto the exact trajectory
of an uninterrupted run.  Checkpoints therefore carry the optimizer moments
next to the parameters.  Metric logs contain no timestamps and repeat
bitwise for the same inputs.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, config_text
from .data import load_split, to_model_input
from .errors import CheckpointError, ConfigError, NumericsError
from .evaluate import ConfusionMatrix
from .losses import BatchTargets
from .model import SegmentationModel

__all__ = ["AdamW", "train", "evaluate_model", "TrainResult"]

log = logging.getLogger("attnseg.train")


class AdamW:
    """Adam with decoupled weight decay on ``.weight`` matrices only."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.step_count
        bias2 = 1.0 - b2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay and p.name.endswith(".weight"):
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update

    def state_records(self):
        records = {"optim.step": np.array([self.step_count], dtype=np.int64)}
        for p, m, v in zip(self.params, self.m, self.v):
            records[f"optim.m.{p.name}"] = m.copy()
            records[f"optim.v.{p.name}"] = v.copy()
        return records

    def load_state(self, records):
        if "optim.step" not in records:
            raise CheckpointError("checkpoint has no optimizer state")
        self.step_count = int(records["optim.step"][0])
        for i, p in enumerate(self.params):
            for store, tag in ((self.m, "m"), (self.v, "v")):
                key = f"optim.{tag}.{p.name}"
                if key not in records:
                    raise CheckpointError(f"checkpoint is missing {key}")
                value = np.asarray(records[key])
                if value.shape != p.data.shape:
                    raise CheckpointError(f"{key} has shape {value.shape}, expected {p.data.shape}")
                store[i] = value.astype(p.data.dtype, copy=True)


@dataclass
class TrainResult:
    checkpoint_path: str
    metrics_path: str | None
    iterations: int
    final_loss: float
    final_breakdown: dict


def _trajectory_key(config_text):
    """Config text minus the keys a resume may legitimately extend.

    ``train.iterations`` only says where a run stops; every other key pins
    the trajectory itself, so any other difference makes resuming unsound.
    """
    return "\n".join(
        line for line in config_text.splitlines() if not line.startswith("train.iterations ")
    )


def _batch_indices(seed, iteration, population, batch_size):
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1, iteration)))
    if population >= batch_size:
        return rng.choice(population, size=batch_size, replace=False)
    return rng.integers(0, population, size=batch_size)


def evaluate_model(model, images, labels, batch_size=32):
    """Dataset mIoU of ``model`` on stacked images/labels."""
    cm = ConfusionMatrix(model.cfg.data.classes)
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        preds = model.infer_batch(chunk)
        for pred, gt in zip(preds, labels[start : start + batch_size]):
            cm.update(gt, pred)
    return cm.iou(), cm.mean_iou()


def train(cfg: ModelConfig, data_dir, out_path, metrics_path=None, resume=None):
    """Train per ``cfg`` on ``data_dir/train`` and write a checkpoint.

    ``resume`` continues from a previous checkpoint of the same config; the
    trajectory is identical to a run that never stopped.
    """
    images_u8, labels = load_split(data_dir, "train")
    size = cfg.data.resolved_image_size(cfg.encoder)
    if images_u8.shape[1] != size:
        raise ConfigError(
            f"dataset images are {images_u8.shape[1]}px, config expects {size}px"
        )
    if len(images_u8) != cfg.data.train_count:
        raise ConfigError(
            f"{data_dir} holds {len(images_u8)} training images, "
            f"config expects data.train_count = {cfg.data.train_count}"
        )
    model = SegmentationModel(cfg)
    images = to_model_input(images_u8).astype(model.dtype)
    optimizer = AdamW(
        model.parameters(),
        lr=cfg.train.lr,
        weight_decay=cfg.train.weight_decay,
    )
    cfg_text = config_text(cfg)

    start_iteration = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if _trajectory_key(ckpt.config_text) != _trajectory_key(cfg_text):
            raise CheckpointError(f"{resume}: checkpoint config does not match the current config")
        model.load_state(ckpt.records)
        optimizer.load_state(ckpt.records)
        start_iteration = ckpt.iteration
        if start_iteration > cfg.train.iterations:
            raise ConfigError(
                f"{resume} is already at iteration {start_iteration}, "
                f"past the budget of {cfg.train.iterations}"
            )
        log.info("resumed from %s at iteration %d", resume, start_iteration)

    # Targets are a pure function of the labels; build them once.
    all_targets = BatchTargets.from_label_maps(
        labels, cfg.data.classes, cfg.loss.no_object, dtype=model.dtype
    )

    lines = []
    population = len(images)
    breakdown = {"total": float("nan"), "cls": float("nan"), "focal": float("nan"), "dice": float("nan")}
    for iteration in range(start_iteration, cfg.train.iterations):
        idx = _batch_indices(cfg.train.seed, iteration, population, cfg.train.batch_size)
        batch_targets = BatchTargets(
            positives=all_targets.positives[idx],
            valid=all_targets.valid[idx],
            class_index=all_targets.class_index[idx],
            class_weight=all_targets.class_weight[idx],
            classes=all_targets.classes,
        )
        try:
            loss, breakdown = model.loss_on_batch(images[idx], labels[idx], batch_targets)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        except NumericsError as exc:
            raise NumericsError(f"training diverged at iteration {iteration}: {exc}") from exc

        if (iteration + 1) % cfg.train.log_interval == 0 or iteration + 1 == cfg.train.iterations:
            line = (
                f"iter={iteration + 1} total={breakdown['total']!r} cls={breakdown['cls']!r} "
                f"focal={breakdown['focal']!r} dice={breakdown['dice']!r}"
            )
            lines.append(line)
            log.info("%s", line)
        if cfg.train.eval_interval and (iteration + 1) % cfg.train.eval_interval == 0:
            subset = slice(0, min(64, population))
            _, train_miou = evaluate_model(model, images_u8[subset], labels[subset])
            line = f"iter={iteration + 1} train_miou={train_miou!r}"
            lines.append(line)
            log.info("%s", line)

    records = model.state_records()
    records.update(optimizer.state_records())
    save_checkpoint(out_path, cfg_text, records, iteration=cfg.train.iterations)
    if metrics_path:
        with open(metrics_path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))
    return TrainResult(
        checkpoint_path=str(out_path),
        metrics_path=str(metrics_path) if metrics_path else None,
        iterations=cfg.train.iterations,
        final_loss=breakdown.get("total", float("nan")),
        final_breakdown=breakdown,
    )


def load_model(checkpoint_path, overrides=()):
    """Rebuild a model from a checkpoint's embedded config and weights."""
    from .config import parse_config

    ckpt = load_checkpoint(checkpoint_path)
    cfg = parse_config(ckpt.config_text, overrides, source=f"{checkpoint_path}:config")
    model = SegmentationModel(cfg)
    model.load_state(ckpt.records)
    return model, cfg, ckpt
