"""Training, evaluation and prediction with a frozen tokenizer, plus the experiment protocols."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
from tqdm import tqdm

from . import tensor as T
from .archive import read_archive, write_archive
from .data import (
    AugmentConfig,
    Sample,
    augment,
    carve_validation,
    ensure_split,
    load_dataset,
    load_image,
    load_mask,
    read_descriptor,
    resize,
    resize_image,
    resize_mask,
    save_gray,
    save_mask,
    worker_count,
)
from .errors import ConfigurationError, ContractError, DivergenceError, UsageError
from .lmm import LmmConfig, LmmModel, build_lmm, count_trainable_params
from .losses import LossConfig, LossMode, MetricResult, compound_loss, evaluate_masks, loss_components
from .optim import AdamW, AdamWState, CosineSchedule
from .rng import Rng
from .tensor import Tensor
from .tokenizer import FrozenTokenizer, MaskCodec, TokenizerKind, decode_to_mask, encode_masks, make_tokenizer

if TYPE_CHECKING:
    from collections.abc import Sequence

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "gms-checkpoint"
BEST_CHECKPOINT = "best.gmsa"
FINAL_CHECKPOINT = "final.gmsa"
REPORT = "report.json"


def config_hash(config: dict[str, Any]) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON of a configuration."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _write_json(path: Path, data: dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


@dataclass
class TrainConfig:
    """Everything a training run depends on."""

    dataset: str | Path
    tokenizer: TokenizerKind = TokenizerKind.patch
    tokenizer_weights: str | Path | None = None
    lmm: LmmConfig | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    batch_size: int = 8
    epochs: int = 200
    image_size: int = 64
    seed: int = 7
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    lr: float = 2e-3
    weight_decay: float = 0.01
    train_fraction: float = 0.8
    validation_fraction: float = 0.1
    output_dir: str | Path | None = None
    deterministic: bool = True
    progress: bool = False

    def validate(self) -> None:
        """Normalize enum fields and check value ranges.

        Raises:
            ConfigurationError: If a value is out of range.
        """
        self.tokenizer = TokenizerKind(self.tokenizer)
        if self.batch_size < 1:
            msg = f"batch_size must be at least 1, got {self.batch_size}."
            raise ConfigurationError(msg)
        if self.epochs < 1:
            msg = f"epochs must be at least 1, got {self.epochs}."
            raise ConfigurationError(msg)
        if self.image_size < 8 or self.image_size % 8 != 0:
            msg = f"image_size must be a positive multiple of 8, got {self.image_size}."
            raise ConfigurationError(msg)
        if not 0.0 < self.train_fraction < 1.0:
            msg = f"train_fraction must lie in (0, 1), got {self.train_fraction}."
            raise ConfigurationError(msg)

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-compatible snapshot."""
        return {
            "dataset": str(self.dataset),
            "tokenizer": TokenizerKind(self.tokenizer).value,
            "tokenizer_weights": None if self.tokenizer_weights is None else str(self.tokenizer_weights),
            "lmm": None if self.lmm is None else self.lmm.to_dict(),
            "loss": self.loss.to_dict(),
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "image_size": self.image_size,
            "seed": self.seed,
            "augment": self.augment.to_dict(),
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "train_fraction": self.train_fraction,
            "validation_fraction": self.validation_fraction,
            "deterministic": self.deterministic,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainConfig:
        """Inverse of :meth:`to_dict` (the output directory is not part of the snapshot)."""
        values = dict(data)
        values["lmm"] = None if values.get("lmm") is None else LmmConfig.from_dict(values["lmm"])
        values["loss"] = LossConfig.from_dict(values["loss"])
        values["augment"] = AugmentConfig(**values["augment"])
        config = cls(**values)
        config.validate()
        return config


def make_train_config(dataset: str | Path, **kwargs: Any) -> TrainConfig:  # noqa: ANN401
    """Create a :class:`TrainConfig` from keyword arguments.

    Raises:
        ValueError: If a keyword is not a configuration field.
    """
    config = TrainConfig(dataset=dataset)
    for key, value in kwargs.items():
        if hasattr(config, key):
            setattr(config, key, value)
        else:
            msg = f"Invalid keyword argument: {key}"
            raise ValueError(msg)
    config.validate()
    return config


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    """LMM weights, optimizer state and the frozen tokenizer they were trained against."""

    lmm_config: LmmConfig
    lmm_state: dict[str, np.ndarray]
    optimizer: AdamWState
    tokenizer_kind: TokenizerKind
    tokenizer_digest: str
    tokenizer_weights: str | None
    config: dict[str, Any]
    epoch: int
    best_val_dsc: float | None
    image_size: int

    def build_model(self) -> LmmModel:
        """Instantiate the model with the stored weights."""
        model = LmmModel(self.lmm_config)
        model.load_state_dict(self.lmm_state)
        return model

    def load_tokenizer(self) -> FrozenTokenizer:
        """Load the tokenizer and verify it is the one the weights were trained against.

        Raises:
            ContractError: If the tokenizer digest differs.
        """
        tok = make_tokenizer(self.tokenizer_kind, self.tokenizer_weights)
        self.verify_tokenizer(tok)
        return tok

    def verify_tokenizer(self, tok: FrozenTokenizer) -> None:
        """Raise :class:`ContractError` unless ``tok`` matches the recorded digest."""
        digest = tok.digest()
        if digest != self.tokenizer_digest:
            msg = (
                f"Tokenizer mismatch: the checkpoint was trained against {self.tokenizer_digest[:16]}, "
                f"the supplied {tok.kind.value} tokenizer is {digest[:16]}."
            )
            raise ContractError(msg)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Write a checkpoint archive (no timestamps, so identical runs give identical bytes)."""
    tensors = {f"lmm.{name}": value for name, value in ckpt.lmm_state.items()}
    tensors.update(ckpt.optimizer.tensors())
    metadata = {
        "format": CHECKPOINT_FORMAT,
        "lmm_config": ckpt.lmm_config.to_dict(),
        "optimizer": ckpt.optimizer.hyperparameters(),
        "tokenizer": {
            "kind": ckpt.tokenizer_kind.value,
            "digest": ckpt.tokenizer_digest,
            "weights": ckpt.tokenizer_weights,
        },
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "best_val_dsc": ckpt.best_val_dsc,
        "image_size": ckpt.image_size,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_archive(path, tensors, metadata)
    log.info("Saved checkpoint %s (epoch %d)", path, ckpt.epoch)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    archive = read_archive(path)
    meta = archive.metadata
    if meta.get("format") != CHECKPOINT_FORMAT:
        msg = f"{path} is not a GMS checkpoint."
        raise ConfigurationError(msg)
    lmm_state = {k[len("lmm.") :]: v for k, v in archive.tensors.items() if k.startswith("lmm.")}
    return Checkpoint(
        lmm_config=LmmConfig.from_dict(meta["lmm_config"]),
        lmm_state=lmm_state,
        optimizer=AdamWState.from_archive(meta["optimizer"], archive.tensors),
        tokenizer_kind=TokenizerKind(meta["tokenizer"]["kind"]),
        tokenizer_digest=meta["tokenizer"]["digest"],
        tokenizer_weights=meta["tokenizer"]["weights"],
        config=meta["config"],
        epoch=int(meta["epoch"]),
        best_val_dsc=meta["best_val_dsc"],
        image_size=int(meta["image_size"]),
    )


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    """Per-sample and mean segmentation metrics of one evaluation."""

    ids: list[str]
    per_sample: list[MetricResult]
    trainable_params: int
    config: dict[str, Any]
    seed: int
    wall_clock_seconds: float = 0.0
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        """Number of evaluated samples."""
        return len(self.per_sample)

    def _mean(self, key: str) -> float:
        return float(np.mean([getattr(r, key) for r in self.per_sample])) if self.per_sample else 0.0

    @property
    def dsc(self) -> float:
        """Mean Dice coefficient."""
        return self._mean("dsc")

    @property
    def iou(self) -> float:
        """Mean intersection over union."""
        return self._mean("iou")

    @property
    def hd95(self) -> float:
        """Mean HD95 in pixels."""
        return self._mean("hd95")

    @property
    def config_hash(self) -> str:
        """Hash of :attr:`config`."""
        return config_hash(self.config)

    def to_dict(self) -> dict[str, Any]:
        """Return the report as written to disk; ``wall_clock_seconds`` is its only timing field."""
        return {
            "dsc": self.dsc,
            "iou": self.iou,
            "hd95": self.hd95,
            "n": self.n,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
            "trainable_params": self.trainable_params,
            "wall_clock_seconds": self.wall_clock_seconds,
            "per_sample": [{"id": i, **r.to_dict()} for i, r in zip(self.ids, self.per_sample)],
            **self.extra,
        }

    def write(self, path: str | Path) -> None:
        """Write the report as indented, key-sorted JSON."""
        _write_json(Path(path), self.to_dict())


@dataclass
class ExperimentTable:
    """Rows of an experiment protocol (ablation, cross-domain, tokenizer comparison)."""

    name: str
    columns: list[str]
    rows: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-compatible representation."""
        return {"name": self.name, "columns": self.columns, "rows": self.rows}

    def write(self, path: str | Path) -> None:
        """Write the table as indented, key-sorted JSON."""
        _write_json(Path(path), self.to_dict())

    def to_text(self) -> str:
        """Render a plain-text table of the metric columns."""
        widths = [max(len(c), *(len(_cell(r.get(c))) for r in self.rows)) for c in self.columns]
        lines = ["  ".join(c.ljust(w) for c, w in zip(self.columns, widths))]
        lines.extend("  ".join(_cell(r.get(c)).ljust(w) for c, w in zip(self.columns, widths)) for r in self.rows)
        return "\n".join(lines)


def _cell(value: object) -> str:
    return f"{value:.4f}" if isinstance(value, float) else str(value)


# ---------------------------------------------------------------------------
# inference helpers


def _stack(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.image for s in samples]), np.stack([s.mask for s in samples])


def predict_masks(
    model: LmmModel, tok: FrozenTokenizer, images: np.ndarray, batch_size: int = 8
) -> tuple[np.ndarray, np.ndarray]:
    """Predict gray-scale and binary masks for ``[N, 3, H, W]`` images."""
    grays, binaries = [], []
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            z_hat = model(tok.encode(Tensor(images[start : start + batch_size])))
            prediction = decode_to_mask(tok, z_hat)
            grays.append(prediction.gray.data)
            binaries.append(prediction.binary)
    return np.concatenate(grays), np.concatenate(binaries)


def evaluate_samples(
    model: LmmModel, tok: FrozenTokenizer, samples: Sequence[Sample], batch_size: int = 8, threads: int = 1
) -> list[MetricResult]:
    """Metrics of the binarized predictions, one per sample, in input order."""
    if not samples:
        return []
    images, masks = _stack(samples)
    _, binaries = predict_masks(model, tok, images, batch_size)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(evaluate_masks, masks, binaries))


def _bind_lmm_config(config: LmmConfig | None, tok: FrozenTokenizer) -> LmmConfig:
    c = tok.latent_channels
    if config is None:
        return LmmConfig(in_channels=c, out_channels=c)
    if config.in_channels != c:
        msg = f"The model maps {config.in_channels}-channel latents but the {tok.kind.value} tokenizer produces {c}."
        raise ConfigurationError(msg)
    return config


def _load_split(cfg: TrainConfig, ids: Sequence[str], threads: int) -> list[Sample]:
    return [resize(s, cfg.image_size) for s in load_dataset(cfg.dataset, ids, threads)]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    """Outcome of :func:`train`."""

    final: Checkpoint
    best: Checkpoint
    report: EvalReport
    initial_loss: dict[str, float]
    epochs: list[dict[str, Any]]
    output_dir: Path | None = None


def _initial_loss(
    cfg: TrainConfig, model: LmmModel, tok: FrozenTokenizer, samples: Sequence[Sample]
) -> dict[str, float]:
    """Loss of the untrained model over the training set, evaluated in 64-bit precision.

    Both components are reported whichever are enabled; ``loss`` sums the enabled ones.
    """
    both = LossConfig(use_lm=True, use_seg=True, lm_reduction=cfg.loss.lm_reduction)
    sums = {"lm": 0.0, "seg": 0.0}
    with T.precision("float64"), T.no_grad():
        for start in range(0, len(samples), cfg.batch_size):
            images, masks = _stack(samples[start : start + cfg.batch_size])
            z_hat = model(tok.encode(Tensor(images)))
            gray = MaskCodec.to_gray(tok.decode(z_hat))
            parts = loss_components(both, encode_masks(tok, masks), z_hat, masks, gray)
            weight = len(images) / len(samples)
            for key, value in parts.items():
                sums[key] += value.item() * weight
    enabled = [key for key, on in (("lm", cfg.loss.use_lm), ("seg", cfg.loss.use_seg)) if on]
    return {"loss": sum(sums[k] for k in enabled), **sums}


def _training_step(
    cfg: TrainConfig, model: LmmModel, tok: FrozenTokenizer, images: np.ndarray, masks: np.ndarray
) -> Tensor:
    with T.no_grad():
        z_i = tok.encode(Tensor(images))
        z_m = encode_masks(tok, masks) if cfg.loss.use_lm else None
    z_hat = model(z_i)
    gray = MaskCodec.to_gray(tok.decode(z_hat)) if cfg.loss.use_seg else None
    return compound_loss(cfg.loss, z_m, z_hat, masks, gray)


def train(cfg: TrainConfig, tokenizer: FrozenTokenizer | None = None) -> TrainResult:
    """Train the latent mapping model against a frozen tokenizer.

    Each epoch shuffles the training ids, augments every sample, encodes
    images and masks, runs the model, evaluates the compound loss and takes
    one AdamW step per batch at the epoch's cosine learning rate. The model
    with the best validation DSC is kept and evaluated on the test split.

    Args:
        cfg: The run configuration.
        tokenizer: A frozen tokenizer; loaded from ``cfg`` when omitted.

    Returns:
        Final and best checkpoints, the test report and the loss trace.

    Raises:
        ContractError: If the tokenizer is not frozen or changes during training.
        UsageError: If a split is empty.
        DivergenceError: If the loss becomes non-finite.
    """
    started = time.perf_counter()
    cfg.validate()
    tok = tokenizer or make_tokenizer(cfg.tokenizer, cfg.tokenizer_weights)
    if not tok.frozen:
        msg = "The tokenizer must be frozen before the latent mapping model is trained."
        raise ContractError(msg)
    digest = tok.digest()
    threads = worker_count(cfg.deterministic)

    parts = ensure_split(cfg.dataset, cfg.seed, cfg.train_fraction)
    if not parts.train or not parts.test:
        msg = (
            f"The split of {cfg.dataset} has {len(parts.train)} train and {len(parts.test)} test samples; "
            "both must be non-empty."
        )
        raise UsageError(msg)
    train_ids, val_ids = carve_validation(parts.train, cfg.validation_fraction, cfg.seed)
    train_samples = _load_split(cfg, train_ids, threads)
    val_samples = _load_split(cfg, val_ids, threads)

    lmm_config = _bind_lmm_config(cfg.lmm, tok)
    model = build_lmm(lmm_config, Rng.derive(cfg.seed, "lmm-init"))
    optimizer = AdamW(dict(model.named_parameters()), lr=cfg.lr, weight_decay=cfg.weight_decay)
    schedule = CosineSchedule(cfg.epochs, cfg.lr)
    n_params = count_trainable_params(model)
    snapshot = cfg.to_dict()
    log.info(
        "Training %d-parameter model on %d samples (%d validation) with the %s tokenizer, loss=%s",
        n_params,
        len(train_samples),
        len(val_samples),
        tok.kind.value,
        cfg.loss.mode.value,
    )

    def _checkpoint(epoch: int, best_dsc: float | None) -> Checkpoint:
        return Checkpoint(
            lmm_config=lmm_config,
            lmm_state=model.state_dict(),
            optimizer=replace(
                optimizer.state,
                m={k: v.copy() for k, v in optimizer.state.m.items()},
                v={k: v.copy() for k, v in optimizer.state.v.items()},
            ),
            tokenizer_kind=tok.kind,
            tokenizer_digest=digest,
            tokenizer_weights=None if cfg.tokenizer_weights is None else str(cfg.tokenizer_weights),
            config=snapshot,
            epoch=epoch,
            best_val_dsc=best_dsc,
            image_size=cfg.image_size,
        )

    output = None if cfg.output_dir is None else Path(cfg.output_dir)
    initial = _initial_loss(cfg, model, tok, train_samples)
    log.info("Initial loss %.6f (lm=%.6f, seg=%.6f)", initial["loss"], initial["lm"], initial["seg"])

    trace: list[dict[str, Any]] = []
    best: Checkpoint | None = None
    best_dsc: float | None = None
    last_finite = initial["loss"]
    for epoch in tqdm(range(cfg.epochs), desc="train", disable=not cfg.progress):
        lr = schedule.lr(epoch)
        order = list(range(len(train_samples)))
        Rng.derive(cfg.seed, "epoch", epoch).shuffle(order)
        losses = []
        for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [
                augment(train_samples[i], cfg.augment, Rng.derive(cfg.seed, "augment", epoch, start + k))
                for k, i in enumerate(order[start : start + cfg.batch_size])
            ]
            images, masks = _stack(batch)
            loss = _training_step(cfg, model, tok, images, masks)
            value = loss.item()
            if not math.isfinite(value):
                msg = (
                    f"Non-finite loss {value} at epoch {epoch + 1}, batch {batch_index} (lr={lr:.3g}, "
                    f"last finite loss {last_finite:.6g}, samples {[s.id for s in batch]})."
                )
                raise DivergenceError(msg)
            last_finite = value
            optimizer.step(T.backward(loss), lr)
            losses.append(value)

        entry: dict[str, Any] = {"epoch": epoch + 1, "lr": lr, "loss": float(np.mean(losses))}
        if val_samples:
            val_results = evaluate_samples(model, tok, val_samples, cfg.batch_size, threads)
            val_dsc = float(np.mean([r.dsc for r in val_results]))
            entry["val_dsc"] = val_dsc
            improved = best_dsc is None or val_dsc > best_dsc
        else:
            improved = True
        if improved:
            best_dsc = entry.get("val_dsc")
            best = _checkpoint(epoch + 1, best_dsc)
            if output is not None:
                save_checkpoint(output / BEST_CHECKPOINT, best)
        trace.append(entry)
        log.info(
            "epoch %d/%d lr=%.3g loss=%.6f val_dsc=%s",
            epoch + 1,
            cfg.epochs,
            lr,
            entry["loss"],
            entry.get("val_dsc", "n/a"),
        )

    final = _checkpoint(cfg.epochs, best_dsc)
    best = best or final
    if output is not None:
        save_checkpoint(output / FINAL_CHECKPOINT, final)

    if tok.digest() != digest:
        msg = "The tokenizer parameters changed during training."
        raise ContractError(msg)

    test_samples = _load_split(cfg, parts.test, threads)
    results = evaluate_samples(best.build_model(), tok, test_samples, cfg.batch_size, threads)
    report = EvalReport(
        ids=[s.id for s in test_samples],
        per_sample=results,
        trainable_params=n_params,
        config=snapshot,
        seed=cfg.seed,
        extra={"split": "test", "training": {"initial": initial, "epochs": trace}, "tokenizer_digest": digest},
    )
    report.wall_clock_seconds = time.perf_counter() - started
    log.info("Test DSC %.4f IoU %.4f HD95 %.3f over %d samples", report.dsc, report.iou, report.hd95, report.n)
    if output is not None:
        report.write(output / REPORT)
    return TrainResult(final, best, report, initial, trace, output)


# ---------------------------------------------------------------------------
# evaluation and prediction


def evaluate(
    checkpoint: Checkpoint | str | Path,
    dataset: str | Path,
    split: str = "test",
    tokenizer: FrozenTokenizer | None = None,
) -> EvalReport:
    """Evaluate a checkpoint on one split (``"train"``, ``"test"`` or ``"all"``) of a dataset.

    Raises:
        ContractError: If the tokenizer is not the one the checkpoint was trained against.
    """
    started = time.perf_counter()
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    if tokenizer is None:
        tok = ckpt.load_tokenizer()
    else:
        ckpt.verify_tokenizer(tokenizer)
        tok = tokenizer
    deterministic = bool(ckpt.config.get("deterministic", True))
    threads = worker_count(deterministic)
    if split == "all":
        ids = None
    elif split in {"train", "test"}:
        parts = ensure_split(dataset, int(ckpt.config.get("seed", 0)), float(ckpt.config.get("train_fraction", 0.8)))
        ids = parts.train if split == "train" else parts.test
    else:
        msg = f"Unknown split {split!r}; expected 'train', 'test' or 'all'."
        raise UsageError(msg)
    samples = [resize(s, ckpt.image_size) for s in load_dataset(dataset, ids, threads)]
    model = ckpt.build_model()
    results = evaluate_samples(model, tok, samples, int(ckpt.config.get("batch_size", 8)), threads)
    report = EvalReport(
        ids=[s.id for s in samples],
        per_sample=results,
        trainable_params=count_trainable_params(model),
        config=ckpt.config,
        seed=int(ckpt.config.get("seed", 0)),
        extra={"split": split, "dataset": str(dataset), "domain": read_descriptor(dataset).get("domain")},
    )
    report.wall_clock_seconds = time.perf_counter() - started
    log.info("%s: DSC %.4f IoU %.4f HD95 %.3f over %d samples", dataset, report.dsc, report.iou, report.hd95, report.n)
    return report


@dataclass
class Prediction:
    """Files written by :func:`predict` and the optional DSC against a reference mask."""

    mask_path: Path
    gray_path: Path
    overlay_path: Path | None = None
    metrics: MetricResult | None = None


def predict(
    checkpoint: Checkpoint | str | Path,
    image: str | Path,
    out: str | Path,
    mask: str | Path | None = None,
    tokenizer: FrozenTokenizer | None = None,
) -> Prediction:
    """Segment one PPM image.

    The image is resized to the training size, segmented, and the gray-scale
    map (bilinear) and binary mask (nearest neighbour) are resized back to the
    input size. Writes ``<stem>_mask.pgm`` and ``<stem>_gray.pgm`` into ``out``
    and, given a reference mask, ``<stem>_overlay.ppm`` with both contours.
    """
    from .visualization.overlay import contour_overlay

    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    if tokenizer is None:
        tok = ckpt.load_tokenizer()
    else:
        ckpt.verify_tokenizer(tokenizer)
        tok = tokenizer
    pixels = load_image(image)
    height, width = pixels.shape[1:]
    resized = resize_image(pixels, ckpt.image_size, ckpt.image_size)
    gray, binary = predict_masks(ckpt.build_model(), tok, resized[None])
    gray = np.clip(resize_image(gray[:1].astype(np.float64), height, width)[0], 0.0, 1.0)
    binary = resize_mask(binary[0], height, width)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(image).stem
    result = Prediction(out / f"{stem}_mask.pgm", out / f"{stem}_gray.pgm")
    save_mask(result.mask_path, binary)
    save_gray(result.gray_path, gray)
    if mask is not None:
        reference = load_mask(mask)
        result.metrics = evaluate_masks(reference, binary)
        result.overlay_path = out / f"{stem}_overlay.ppm"
        contour_overlay(pixels, reference, binary, result.overlay_path)
        log.info("%s: DSC %.4f against %s", image, result.metrics.dsc, mask)
    return result


# ---------------------------------------------------------------------------
# experiment protocols

_METRICS = ["dsc", "iou", "hd95"]


def _subdir(cfg: TrainConfig, name: str) -> Path | None:
    return None if cfg.output_dir is None else Path(cfg.output_dir) / name


def run_ablation(base: TrainConfig, tokenizer: FrozenTokenizer | None = None) -> ExperimentTable:
    """Train with the latent matching loss only, the segmentation loss only, and both.

    All runs share the seed (hence the initial weights and batch order) and the tokenizer.
    """
    base.validate()
    tok = tokenizer or make_tokenizer(base.tokenizer, base.tokenizer_weights)
    table = ExperimentTable("loss-ablation", ["loss", *_METRICS, "initial_loss"])
    for mode in LossMode:
        cfg = replace(
            base,
            loss=LossConfig.from_mode(mode, base.loss.lm_reduction),
            output_dir=_subdir(base, f"ablation-{mode.value}"),
        )
        result = train(cfg, tok)
        report = result.report
        table.rows.append(
            {
                "loss": mode.value,
                "dsc": report.dsc,
                "iou": report.iou,
                "hd95": report.hd95,
                "n": report.n,
                "seed": cfg.seed,
                "config_hash": report.config_hash,
                "initial_loss": result.initial_loss["loss"],
                "initial_lm": result.initial_loss["lm"],
                "initial_seg": result.initial_loss["seg"],
            }
        )
        log.info("ablation %s: DSC %.4f IoU %.4f HD95 %.3f", mode.value, report.dsc, report.iou, report.hd95)
    if base.output_dir is not None:
        table.write(Path(base.output_dir) / "ablation.json")
    return table


def run_cross_domain(
    cfg_a: TrainConfig,
    cfg_b: TrainConfig,
    tokenizer: FrozenTokenizer | None = None,
    output_dir: str | Path | None = None,
) -> ExperimentTable:
    """Train one model per domain and evaluate each on both test splits.

    Exactly two checkpoints are produced; each is evaluated in-domain and cross-domain.
    """
    cfg_a.validate()
    cfg_b.validate()
    tok = tokenizer or make_tokenizer(cfg_a.tokenizer, cfg_a.tokenizer_weights)
    table = ExperimentTable("cross-domain", ["train", "test", *_METRICS, "kind"])
    configs = {"A": cfg_a, "B": cfg_b}
    checkpoints = {name: train(cfg, tok).best for name, cfg in configs.items()}
    for source, target in (("A", "A"), ("A", "B"), ("B", "B"), ("B", "A")):
        report = evaluate(checkpoints[source], configs[target].dataset, "test", tok)
        table.rows.append(
            {
                "train": source,
                "test": target,
                "kind": "in-domain" if source == target else "cross-domain",
                "dsc": report.dsc,
                "iou": report.iou,
                "hd95": report.hd95,
                "n": report.n,
                "seed": configs[source].seed,
                "config_hash": report.config_hash,
                "train_domain": read_descriptor(configs[source].dataset).get("domain"),
                "test_domain": read_descriptor(configs[target].dataset).get("domain"),
            }
        )
    by_pair = {(r["train"], r["test"]): r["dsc"] for r in table.rows}
    for source, target in (("A", "B"), ("B", "A")):
        holds = by_pair[source, source] >= by_pair[source, target]
        log.info(
            "trained on %s: in-domain DSC %.4f %s cross-domain DSC %.4f",
            source,
            by_pair[source, source],
            ">=" if holds else "<",
            by_pair[source, target],
        )
    if output_dir is not None:
        table.write(Path(output_dir) / "cross_domain.json")
    return table


def run_tokenizer_ablation(cfg: TrainConfig, vae_weights: str | Path | None = None) -> ExperimentTable:
    """Train the same model under the patch and the conv-VAE tokenizer.

    The model's latent channel count follows each tokenizer; everything else,
    including the seed, is shared.
    """
    cfg.validate()
    weights = vae_weights if vae_weights is not None else cfg.tokenizer_weights
    table = ExperimentTable("tokenizer-ablation", ["tokenizer", "latent_channels", *_METRICS])
    for kind in (TokenizerKind.patch, TokenizerKind.conv_vae):
        tok = make_tokenizer(kind, weights)
        c = tok.latent_channels
        lmm = None if cfg.lmm is None else replace(cfg.lmm, in_channels=c, out_channels=c)
        run = replace(
            cfg, tokenizer=kind, tokenizer_weights=weights, lmm=lmm, output_dir=_subdir(cfg, f"tokenizer-{kind.value}")
        )
        report = train(run, tok).report
        table.rows.append(
            {
                "tokenizer": kind.value,
                "latent_channels": tok.latent_channels,
                "dsc": report.dsc,
                "iou": report.iou,
                "hd95": report.hd95,
                "n": report.n,
                "seed": run.seed,
                "trainable_params": report.trainable_params,
                "config_hash": report.config_hash,
            }
        )
    if cfg.output_dir is not None:
        table.write(Path(cfg.output_dir) / "tokenizer_ablation.json")
    return table
