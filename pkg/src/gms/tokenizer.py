"""Frozen image tokenizers mapping images and masks to latents at 1/8 resolution and back."""

from __future__ import annotations

import hashlib
import logging
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any

import numpy as np
from tqdm import tqdm

from . import tensor as T
from .archive import read_archive, write_archive
from .errors import ConfigurationError, DimensionError, UsageError, ValidationError
from .layers import Conv2d, Module, PReLU, init_parameters
from .optim import AdamW, CosineSchedule
from .rng import Rng
from .tensor import Tensor

if TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path

    from numpy.typing import ArrayLike

    from .data import Sample

log = logging.getLogger(__name__)

DOWNSAMPLE_FACTOR = 8
PATCH_LATENT_CHANNELS = 3 * DOWNSAMPLE_FACTOR * DOWNSAMPLE_FACTOR
VAE_LATENT_CHANNELS = 4
_LOGVAR_RANGE = (-30.0, 20.0)


class TokenizerKind(str, Enum):
    """Available tokenizer implementations."""

    patch = "patch"
    conv_vae = "conv_vae"


@dataclass(frozen=True)
class MaskCodec:
    """Adapter between 1-channel masks and the 3-channel tokenizer.

    Masks are replicated to three channels before encoding; decoded outputs
    are averaged over channels into a gray-scale map and binarized with
    ``gray >= threshold``.
    """

    threshold: float = 0.5

    def replicate(self, mask: Tensor | ArrayLike) -> Tensor:
        """Turn ``[..., H, W]`` into ``[..., 3, H, W]``."""
        values = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
        return Tensor(np.repeat(np.expand_dims(values, -3), 3, axis=-3))

    @staticmethod
    def to_gray(decoded: Tensor) -> Tensor:
        """Channel mean of a decoded ``[..., 3, H, W]`` tensor."""
        return T.reduce(decoded, "mean", axes=(decoded.ndim - 3,))

    def binarize(self, gray: Tensor | ArrayLike) -> np.ndarray:
        """Threshold a gray-scale map into a {0, 1} uint8 mask."""
        values = gray.data if isinstance(gray, Tensor) else np.asarray(gray)
        return (values >= self.threshold).astype(np.uint8)


@dataclass(frozen=True)
class MaskPrediction:
    """Decoded gray-scale mask (differentiable) and its binarization."""

    gray: Tensor
    binary: np.ndarray


class FrozenTokenizer(Module, ABC):
    """An encoder/decoder pair whose parameters never change once frozen."""

    kind: TokenizerKind
    downsample_factor = DOWNSAMPLE_FACTOR

    def __init__(self, latent_channels: int, encoder: Module, decoder: Module) -> None:
        """Attach the encoder and decoder."""
        super().__init__()
        self.latent_channels = latent_channels
        self.encoder = encoder
        self.decoder = decoder
        self.register_module("encoder", encoder)
        self.register_module("decoder", decoder)
        self.frozen = False

    @property
    def encoder_params(self) -> dict[str, Tensor]:
        """Named encoder tensors."""
        return dict(self.encoder.named_parameters())

    @property
    def decoder_params(self) -> dict[str, Tensor]:
        """Named decoder tensors."""
        return dict(self.decoder.named_parameters())

    def freeze(self) -> None:
        """Exclude all parameters from differentiation and mark the tokenizer frozen."""
        super().freeze()
        self.frozen = True

    def digest(self) -> str:
        """SHA-256 over kind, names, shapes and values of all parameters."""
        h = hashlib.sha256(self.kind.value.encode())
        for name, param in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(repr(param.shape).encode())
            h.update(param.data.astype("<f8").tobytes())
        return h.hexdigest()

    def metadata(self) -> dict[str, Any]:
        """Descriptor stored alongside the weights."""
        return {
            "kind": self.kind.value,
            "latent_channels": self.latent_channels,
            "downsample_factor": self.downsample_factor,
            "digest": self.digest(),
        }

    def latent_shape(self, height: int, width: int) -> tuple[int, int, int]:
        """Latent shape of an image of the given size."""
        self._check_size(height, width)
        f = self.downsample_factor
        return self.latent_channels, height // f, width // f

    def _check_size(self, height: int, width: int) -> None:
        f = self.downsample_factor
        if height % f or width % f:
            msg = f"Image size {height}x{width} is not divisible by {f}; resize it to a multiple of {f} first."
            raise ConfigurationError(msg)

    def encode(self, images: Tensor) -> Tensor:
        """Encode ``[N, 3, H, W]`` images in [0, 1] to ``[N, c_lat, H/8, W/8]``."""
        if images.ndim != 4 or images.shape[1] != 3:
            msg = f"Tokenizers encode [N, 3, H, W] images, got shape {images.shape}."
            raise DimensionError(msg)
        self._check_size(images.shape[2], images.shape[3])
        return self._encode(images)

    def decode(self, latents: Tensor) -> Tensor:
        """Decode ``[N, c_lat, h, w]`` latents to ``[N, 3, 8h, 8w]`` images in [0, 1]."""
        if latents.ndim != 4 or latents.shape[1] != self.latent_channels:
            msg = f"This tokenizer decodes {self.latent_channels}-channel latents, got shape {latents.shape}."
            raise DimensionError(msg)
        return self._decode(latents)

    @abstractmethod
    def _encode(self, images: Tensor) -> Tensor: ...

    @abstractmethod
    def _decode(self, latents: Tensor) -> Tensor: ...


class PatchTokenizer(FrozenTokenizer):
    """Parameter-free space-to-depth: each 8x8x3 patch becomes 192 latent channels.

    Channel ``c * 64 + dy * 8 + dx`` of latent position ``(i, j)`` holds image
    channel ``c`` at pixel ``(8 i + dy, 8 j + dx)``. Decoding is the inverse
    permutation, clamped to [0, 1] (the identity for valid images).
    """

    kind = TokenizerKind.patch

    def __init__(self) -> None:
        """Create the (always frozen) tokenizer."""
        super().__init__(PATCH_LATENT_CHANNELS, Module(), Module())
        self.freeze()

    def _encode(self, images: Tensor) -> Tensor:
        n, c, h, w = images.shape
        f = self.downsample_factor
        blocks = T.reshape(images, (n, c, h // f, f, w // f, f))
        return T.reshape(T.permute(blocks, (0, 1, 3, 5, 2, 4)), (n, c * f * f, h // f, w // f))

    def _decode(self, latents: Tensor) -> Tensor:
        n, _, h, w = latents.shape
        f = self.downsample_factor
        blocks = T.reshape(latents, (n, 3, f, f, h, w))
        images = T.reshape(T.permute(blocks, (0, 1, 4, 2, 5, 3)), (n, 3, h * f, w * f))
        return T.clamp(images, 0.0, 1.0)


class ConvVaeEncoder(Module):
    """Three stride-2 conv + PReLU blocks (32, 64, 128 channels) and a mean/log-variance head."""

    widths = (32, 64, 128)

    def __init__(self, latent_channels: int) -> None:
        """Create the encoder."""
        super().__init__()
        self.latent_channels = latent_channels
        self.down: list[tuple[Conv2d, PReLU]] = []
        previous = 3
        for index, width in enumerate(self.widths):
            conv = Conv2d(previous, width, 3, stride=2, padding=1)
            act = PReLU(width)
            self.register_module(f"down{index}", conv)
            self.register_module(f"act{index}", act)
            self.down.append((conv, act))
            previous = width
        self.head = Conv2d(previous, 2 * latent_channels, 3, padding=1)
        self.register_module("head", self.head)

    def moments(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return the posterior mean and log-variance of inputs in [-1, 1]."""
        h = x
        for conv, act in self.down:
            h = act(conv(h))
        out = self.head(h)
        c = self.latent_channels
        return T.narrow(out, 1, 0, c), T.clamp(T.narrow(out, 1, c, c), *_LOGVAR_RANGE)

    def forward(self, x: Tensor) -> Tensor:
        """Return the posterior mean."""
        return self.moments(x)[0]


class ConvVaeDecoder(Module):
    """Mirror of the encoder: stem conv, three nearest x2 upsample + conv + PReLU blocks, tanh output in [-1, 1]."""

    widths = (64, 32, 32)

    def __init__(self, latent_channels: int) -> None:
        """Create the decoder."""
        super().__init__()
        self.stem = Conv2d(latent_channels, 128, 3, padding=1)
        self.stem_act = PReLU(128)
        self.register_module("stem", self.stem)
        self.register_module("stem_act", self.stem_act)
        self.up: list[tuple[Conv2d, PReLU]] = []
        previous = 128
        for index, width in enumerate(self.widths):
            conv = Conv2d(previous, width, 3, padding=1)
            act = PReLU(width)
            self.register_module(f"up{index}", conv)
            self.register_module(f"act{index}", act)
            self.up.append((conv, act))
            previous = width
        self.out = Conv2d(previous, 3, 3, padding=1)
        self.register_module("out", self.out)

    def forward(self, x: Tensor) -> Tensor:
        """Decode latents to images in [-1, 1]."""
        h = self.stem_act(self.stem(x))
        for conv, act in self.up:
            h = act(conv(T.upsample_nearest2d(h, 2)))
        return T.tanh(self.out(h))


class ConvVaeTokenizer(FrozenTokenizer):
    """A small convolutional VAE; images are mapped to [-1, 1] before encoding and back to [0, 1] after decoding."""

    kind = TokenizerKind.conv_vae

    def __init__(self, latent_channels: int = VAE_LATENT_CHANNELS) -> None:
        """Create an untrained tokenizer."""
        super().__init__(latent_channels, ConvVaeEncoder(latent_channels), ConvVaeDecoder(latent_channels))

    def moments(self, images: Tensor) -> tuple[Tensor, Tensor]:
        """Posterior mean and log-variance of ``[N, 3, H, W]`` images in [0, 1]."""
        assert isinstance(self.encoder, ConvVaeEncoder)
        return self.encoder.moments(T.shift(T.scale(images, 2.0), -1.0))

    def _encode(self, images: Tensor) -> Tensor:
        return self.moments(images)[0]

    def _decode(self, latents: Tensor) -> Tensor:
        return T.scale(T.shift(self.decoder(latents), 1.0), 0.5)


# ---------------------------------------------------------------------------
# single-sample API

_CODEC = MaskCodec()


def _batched(x: Tensor) -> Tensor:
    return T.reshape(x, (1, *x.shape))


def _unbatched(x: Tensor) -> Tensor:
    return T.reshape(x, x.shape[1:])


def encode_image(tok: FrozenTokenizer, img: Tensor) -> Tensor:
    """Encode a ``[3, H, W]`` image in [0, 1] to ``[c_lat, H/8, W/8]``."""
    if img.ndim != 3:
        msg = f"encode_image expects a [3, H, W] image, got shape {img.shape}."
        raise DimensionError(msg)
    return _unbatched(tok.encode(_batched(img)))


def decode_latent(tok: FrozenTokenizer, z: Tensor) -> Tensor:
    """Decode a ``[c_lat, h, w]`` latent to a ``[3, 8h, 8w]`` image in [0, 1]."""
    if z.ndim != 3:
        msg = f"decode_latent expects a [c_lat, h, w] latent, got shape {z.shape}."
        raise DimensionError(msg)
    return _unbatched(tok.decode(_batched(z)))


def _check_mask(mask: Tensor | ArrayLike) -> np.ndarray:
    values = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if not np.isin(values, (0, 1)).all():
        msg = "Masks must only contain the values 0 and 1."
        raise ValidationError(msg)
    return values


def encode_mask(tok: FrozenTokenizer, mask: Tensor | ArrayLike, codec: MaskCodec = _CODEC) -> Tensor:
    """Encode a binary ``[H, W]`` mask (replicated to three channels) to a latent."""
    values = _check_mask(mask)
    if values.ndim != 2:
        msg = f"encode_mask expects an [H, W] mask, got shape {values.shape}."
        raise DimensionError(msg)
    return encode_image(tok, codec.replicate(values))


def encode_masks(tok: FrozenTokenizer, masks: ArrayLike, codec: MaskCodec = _CODEC) -> Tensor:
    """Encode a batch of binary ``[N, H, W]`` masks."""
    values = _check_mask(masks)
    return tok.encode(codec.replicate(values))


def decode_to_mask(tok: FrozenTokenizer, z: Tensor, codec: MaskCodec = _CODEC) -> MaskPrediction:
    """Decode a latent (single ``[c, h, w]`` or batched) into gray-scale and binary masks."""
    decoded = decode_latent(tok, z) if z.ndim == 3 else tok.decode(z)
    gray = codec.to_gray(decoded)
    return MaskPrediction(gray, codec.binarize(gray))


# ---------------------------------------------------------------------------
# conv-VAE training


@dataclass(frozen=True)
class VaeTrainConfig:
    """Hyper-parameters of :func:`train_conv_vae`."""

    epochs: int = 200
    lr: float = 2e-3
    kl_weight: float = 1e-6
    batch_size: int = 8
    latent_channels: int = VAE_LATENT_CHANNELS
    weight_decay: float = 0.0
    seed: int = 0
    include_masks: bool = True
    progress: bool = False

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-compatible representation."""
        return asdict(self)


@dataclass
class VaeLoss:
    """Training objective of the conv VAE and its parts."""

    total: Tensor
    reconstruction: float
    kl: float


def vae_loss(
    tok: ConvVaeTokenizer, images: Tensor, kl_weight: float, noise: np.random.Generator | None = None
) -> VaeLoss:
    """Reconstruction MSE plus ``kl_weight`` times the KL divergence to N(0, I).

    Latents are sampled with the reparameterization trick when ``kl_weight > 0``
    and ``noise`` is given; otherwise the posterior mean is decoded and the
    objective is that of a plain autoencoder (the KL term contributes exactly 0).
    """
    mean, logvar = tok.moments(images)
    z = mean
    if kl_weight > 0 and noise is not None:
        eps = Tensor(noise.standard_normal(mean.shape))
        z = T.add(mean, T.multiply(T.exp(T.scale(logvar, 0.5)), eps))
    reconstruction = T.reduce(T.square(T.subtract(tok.decode(z), images)), "mean")
    if kl_weight <= 0:
        return VaeLoss(reconstruction, reconstruction.item(), 0.0)
    inner = T.subtract(T.subtract(T.shift(logvar, 1.0), T.square(mean)), T.exp(logvar))
    kl = T.scale(T.reduce(inner, "sum"), -0.5 / images.shape[0])
    return VaeLoss(T.add(reconstruction, T.scale(kl, kl_weight)), reconstruction.item(), kl.item())


def train_conv_vae(samples: Sequence[Sample], config: VaeTrainConfig | None = None) -> ConvVaeTokenizer:
    """Train a conv-VAE tokenizer on images (and, by default, their replicated masks) and freeze it.

    Args:
        samples: Training samples; image sizes must be divisible by 8.
        config: Hyper-parameters.

    Returns:
        The trained, frozen tokenizer.
    """
    config = config or VaeTrainConfig()
    if not samples:
        msg = "train_conv_vae needs at least one sample."
        raise UsageError(msg)
    arrays = [s.image for s in samples]
    if config.include_masks:
        arrays.extend(np.repeat(s.mask[None, :, :], 3, axis=0).astype(np.float32) for s in samples)
    data = np.stack(arrays)

    tok = ConvVaeTokenizer(config.latent_channels)
    tok.latent_shape(data.shape[2], data.shape[3])
    init_parameters(tok, Rng.derive(config.seed, "vae-init"))
    optimizer = AdamW(dict(tok.named_parameters()), lr=config.lr, weight_decay=config.weight_decay)
    schedule = CosineSchedule(config.epochs, config.lr)
    rng = Rng.derive(config.seed, "vae-batches")
    noise = rng.numpy()

    epochs = tqdm(range(config.epochs), desc="conv-vae", disable=not config.progress)
    for epoch in epochs:
        lr = schedule.lr(epoch)
        order = list(range(len(data)))
        rng.shuffle(order)
        totals = []
        for start in range(0, len(order), config.batch_size):
            batch = Tensor(data[order[start : start + config.batch_size]])
            loss = vae_loss(tok, batch, config.kl_weight, noise)
            optimizer.step(T.backward(loss.total), lr)
            totals.append((loss.total.item(), loss.reconstruction, loss.kl))
        mean_total, mean_rec, mean_kl = np.mean(totals, axis=0)
        log.info(
            "vae epoch %d/%d lr=%.3g loss=%.6f mse=%.6f kl=%.3f",
            epoch + 1,
            config.epochs,
            lr,
            mean_total,
            mean_rec,
            mean_kl,
        )

    tok.freeze()
    return tok


# ---------------------------------------------------------------------------
# persistence


def save_tokenizer(tok: FrozenTokenizer, path: str | Path) -> None:
    """Write the tokenizer weights and descriptor to an archive."""
    write_archive(path, dict(tok.named_parameters()), {"format": "gms-tokenizer", **tok.metadata()})


def tokenizer_from_metadata(metadata: dict[str, Any]) -> FrozenTokenizer:
    """Instantiate an (unfrozen, zero-initialized) tokenizer described by archive metadata."""
    kind = TokenizerKind(metadata["kind"])
    if kind == TokenizerKind.patch:
        return PatchTokenizer()
    return ConvVaeTokenizer(int(metadata["latent_channels"]))


def load_tokenizer(path: str | Path) -> FrozenTokenizer:
    """Read a tokenizer written by :func:`save_tokenizer`; the result is frozen."""
    archive = read_archive(path)
    if archive.metadata.get("format") != "gms-tokenizer":
        msg = f"{path} does not hold tokenizer weights."
        raise ConfigurationError(msg)
    tok = tokenizer_from_metadata(archive.metadata)
    tok.load_state_dict(archive.tensors)
    tok.freeze()
    return tok


def make_tokenizer(kind: str | TokenizerKind, weights: str | Path | None = None) -> FrozenTokenizer:
    """Return a frozen tokenizer of the given kind.

    Args:
        kind: ``"patch"`` or ``"conv_vae"``.
        weights: Archive written by :func:`save_tokenizer`; required for the conv VAE.
    """
    kind = TokenizerKind(kind)
    if kind == TokenizerKind.patch:
        return PatchTokenizer()
    if weights is None:
        msg = "The conv_vae tokenizer needs trained weights (see train_conv_vae / `gms train-tokenizer`)."
        raise UsageError(msg)
    tok = load_tokenizer(weights)
    if tok.kind != kind:
        msg = f"{weights} holds a {tok.kind.value} tokenizer, not {kind.value}."
        raise ConfigurationError(msg)
    return tok
