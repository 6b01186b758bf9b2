"""attnseg: semantic segmentation whose attention maps double as masks.

A plain (non-hierarchical) vision-transformer encoder feeds a decoder whose
class tokens cross-attend into the feature tokens; the very similarity map
that drives the attention softmax is summed over heads and sigmoided into
per-class segmentation masks.  Stages cascade over several backbone depths
with their mask logits summed orderly.  An optional shrunk backbone halves
the token grid partway up with query-based downsampling and restores it with
two query-based upsampling blocks.

Everything runs on a small numpy-backed reverse-mode autodiff core
(:mod:`attnseg.tensor`); there is no framework underneath.
"""

from .checkpoint import CheckpointData, load_checkpoint, save_checkpoint
from .config import DataConfig, ModelConfig, TrainConfig, config_text, load_config, parse_config
from .data import generate_dataset, load_split, read_pgm, read_ppm, to_model_input, write_pgm, write_ppm
from .decoder import MaskDecoder, MaskStack, SimilarityMap, StageOutput, labels_from_scores, semantic_inference
from .encoder import EncoderConfig, PatchEmbed, TokenSequence, VitEncoder
from .errors import CheckpointError, ConfigError, DataError, NumericsError, ShapeError
from .evaluate import ConfusionMatrix, format_report, miou
from .flops import CostBreakdown, compare, estimate
from .interpolate import bilinear_matrix
from .losses import (
    IGNORE_LABEL,
    BatchTargets,
    LossWeights,
    SegTarget,
    cls_loss,
    dice_loss,
    focal_loss,
    total_loss,
)
from .model import SegmentationModel
from .shrink import QueryUpsampler, ShrinkConfig, encode_shrunk
from .tensor import (
    Parameter,
    Tensor,
    finite_checks,
    gelu,
    grad_check,
    layer_norm,
    log_sigmoid,
    log_softmax,
    matmul,
    no_grad,
    sigmoid,
    softmax,
)
from .train import AdamW, evaluate_model, load_model, train

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "BatchTargets",
    "CheckpointData",
    "CheckpointError",
    "ConfigError",
    "ConfusionMatrix",
    "CostBreakdown",
    "DataConfig",
    "DataError",
    "EncoderConfig",
    "IGNORE_LABEL",
    "LossWeights",
    "MaskDecoder",
    "MaskStack",
    "ModelConfig",
    "NumericsError",
    "Parameter",
    "PatchEmbed",
    "QueryUpsampler",
    "SegTarget",
    "SegmentationModel",
    "ShapeError",
    "ShrinkConfig",
    "SimilarityMap",
    "StageOutput",
    "Tensor",
    "TokenSequence",
    "TrainConfig",
    "VitEncoder",
    "bilinear_matrix",
    "cls_loss",
    "compare",
    "config_text",
    "dice_loss",
    "estimate",
    "evaluate_model",
    "finite_checks",
    "focal_loss",
    "format_report",
    "gelu",
    "generate_dataset",
    "grad_check",
    "labels_from_scores",
    "layer_norm",
    "load_checkpoint",
    "load_config",
    "load_model",
    "load_split",
    "log_sigmoid",
    "log_softmax",
    "matmul",
    "miou",
    "no_grad",
    "parse_config",
    "read_pgm",
    "read_ppm",
    "save_checkpoint",
    "semantic_inference",
    "sigmoid",
    "softmax",
    "to_model_input",
    "total_loss",
    "train",
    "write_pgm",
    "write_ppm",
]
