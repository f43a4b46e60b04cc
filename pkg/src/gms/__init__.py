"""GMS: segmentation as latent mapping between the representations of a frozen image tokenizer.

This file is part of the GMS library released under the MIT license.
See README.md for more information.
"""

from __future__ import annotations

from ._version import version as __version__
from .archive import Archive, ArchiveHeader, read_archive, read_archive_header, write_archive
from .data import AugmentConfig, DomainSpec, Sample, augment, generate_synthetic, load_dataset, split
from .errors import (
    ArchiveCorruptionError,
    ArchiveFormatError,
    ArchiveVersionError,
    ConfigurationError,
    ContractError,
    DimensionError,
    DivergenceError,
    GmsError,
    GraphStateError,
    ParseError,
    UsageError,
    ValidationError,
)
from .lmm import LmmConfig, LmmModel, build_lmm, count_trainable_params, lmm_forward
from .losses import LossConfig, LossMode, MetricResult, compound_loss, dsc_iou, evaluate_masks, hd95
from .optim import AdamW, CosineSchedule
from .rng import Rng
from .tensor import Tensor, backward, no_grad, precision
from .tokenizer import (
    ConvVaeTokenizer,
    FrozenTokenizer,
    PatchTokenizer,
    TokenizerKind,
    load_tokenizer,
    make_tokenizer,
    save_tokenizer,
    train_conv_vae,
)
from .trainer import (
    Checkpoint,
    EvalReport,
    ExperimentTable,
    TrainConfig,
    evaluate,
    load_checkpoint,
    make_train_config,
    predict,
    run_ablation,
    run_cross_domain,
    run_tokenizer_ablation,
    save_checkpoint,
    train,
)

__all__ = [
    "AdamW",
    "Archive",
    "ArchiveCorruptionError",
    "ArchiveFormatError",
    "ArchiveHeader",
    "ArchiveVersionError",
    "AugmentConfig",
    "Checkpoint",
    "ConfigurationError",
    "ContractError",
    "ConvVaeTokenizer",
    "CosineSchedule",
    "DimensionError",
    "DivergenceError",
    "DomainSpec",
    "EvalReport",
    "ExperimentTable",
    "FrozenTokenizer",
    "GmsError",
    "GraphStateError",
    "LmmConfig",
    "LmmModel",
    "LossConfig",
    "LossMode",
    "MetricResult",
    "ParseError",
    "PatchTokenizer",
    "Rng",
    "Sample",
    "Tensor",
    "TokenizerKind",
    "TrainConfig",
    "UsageError",
    "ValidationError",
    "__version__",
    "augment",
    "backward",
    "build_lmm",
    "compound_loss",
    "count_trainable_params",
    "dsc_iou",
    "evaluate",
    "evaluate_masks",
    "generate_synthetic",
    "hd95",
    "lmm_forward",
    "load_checkpoint",
    "load_dataset",
    "load_tokenizer",
    "make_tokenizer",
    "make_train_config",
    "no_grad",
    "precision",
    "predict",
    "read_archive",
    "read_archive_header",
    "run_ablation",
    "run_cross_domain",
    "run_tokenizer_ablation",
    "save_checkpoint",
    "save_tokenizer",
    "split",
    "train",
    "train_conv_vae",
    "write_archive",
]
