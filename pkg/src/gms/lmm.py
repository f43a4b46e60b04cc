"""The latent mapping model: a resolution-preserving network from image latents to mask latents."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .layers import Conv2d, ConvBlock, Module, SelfAttention2d, init_parameters

if TYPE_CHECKING:
    from collections.abc import Mapping

    from .rng import Rng
    from .tensor import Tensor


class StageKind(str, Enum):
    """Building blocks a stage pattern is written in."""

    conv = "conv"
    attention = "attention"


DEFAULT_STAGE_PATTERN = ("conv", "conv", "attention", "conv", "conv", "attention", "conv", "conv")


@dataclass(frozen=True)
class LmmConfig:
    """Architecture of a latent mapping model.

    Consecutive ``conv`` entries of ``stage_pattern`` are paired into residual
    units; a ``conv`` without a partner forms a unit on its own.
    """

    in_channels: int = 4
    out_channels: int = 4
    width: int = 128
    stage_pattern: tuple[str, ...] = DEFAULT_STAGE_PATTERN
    num_groups: int | None = None
    key_channels: int | None = None
    skip_connections: bool = True

    def __post_init__(self) -> None:
        """Validate the configuration."""
        if self.in_channels != self.out_channels:
            msg = (
                f"The latent mapping model maps between latents of one tokenizer: in_channels ({self.in_channels}) "
                f"must equal out_channels ({self.out_channels})."
            )
            raise ConfigurationError(msg)
        if self.in_channels < 1 or self.width < 1:
            msg = f"Channel counts must be positive, got in_channels={self.in_channels}, width={self.width}."
            raise ConfigurationError(msg)
        pattern = tuple(StageKind(stage).value for stage in self.stage_pattern)
        object.__setattr__(self, "stage_pattern", pattern)

    @property
    def latent_channels(self) -> int:
        """Channel count of the latents the model maps (c_lat)."""
        return self.in_channels

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-compatible representation."""
        data = asdict(self)
        data["stage_pattern"] = list(self.stage_pattern)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> LmmConfig:
        """Inverse of :meth:`to_dict`."""
        values = dict(data)
        values["stage_pattern"] = tuple(values.get("stage_pattern", DEFAULT_STAGE_PATTERN))
        return cls(**values)


class ResidualConvUnit(Module):
    """One or two conv blocks with an optional additive skip connection around them."""

    def __init__(self, channels: int, depth: int, num_groups: int | None, skip: bool) -> None:
        """Create ``depth`` width-preserving conv blocks."""
        super().__init__()
        self.skip = skip
        self.blocks = [ConvBlock(channels, channels, 3, num_groups) for _ in range(depth)]
        for index, block in enumerate(self.blocks):
            self.register_module(f"block{index}", block)

    def forward(self, x: Tensor) -> Tensor:
        """Apply the blocks and, if enabled, add the input back."""
        y = x
        for block in self.blocks:
            y = block(y)
        return T.add(y, x) if self.skip else y


class LmmModel(Module):
    """Input projection, residual conv units and attention stages, output projection.

    No stage changes the spatial size and the output projection has no
    activation, since the target latents are unbounded.
    """

    def __init__(self, config: LmmConfig) -> None:
        """Instantiate the layers described by ``config`` (weights are zero until initialized)."""
        super().__init__()
        self.config = config
        self.input_proj = Conv2d(config.in_channels, config.width, 3, padding=1)
        self.register_module("input_proj", self.input_proj)
        self.stages: list[Module] = []
        pattern = list(config.stage_pattern)
        i = 0
        while i < len(pattern):
            if pattern[i] == StageKind.attention.value:
                stage: Module = SelfAttention2d(config.width, config.key_channels)
                i += 1
            else:
                depth = 2 if i + 1 < len(pattern) and pattern[i + 1] == StageKind.conv.value else 1
                stage = ResidualConvUnit(config.width, depth, config.num_groups, config.skip_connections)
                i += depth
            self.register_module(f"stage{len(self.stages)}", stage)
            self.stages.append(stage)
        self.output_proj = Conv2d(config.width, config.out_channels, 3, padding=1)
        self.register_module("output_proj", self.output_proj)

    def forward(self, x: Tensor) -> Tensor:
        """Map a batch of latents ``[N, c_lat, h, w]``."""
        h = self.input_proj(x)
        for stage in self.stages:
            h = stage(h)
        return self.output_proj(h)


def build_lmm(config: LmmConfig, rng: Rng) -> LmmModel:
    """Create and initialize a model."""
    model = LmmModel(config)
    init_parameters(model, rng)
    return model


def lmm_forward(model: LmmModel, z_i: Tensor) -> Tensor:
    """Map image latents to predicted mask latents.

    Args:
        model: The model.
        z_i: A single latent ``[c_lat, h, w]`` or a batch ``[N, c_lat, h, w]``.

    Returns:
        A tensor of the same shape as ``z_i``.
    """
    single = z_i.ndim == 3
    if z_i.ndim not in {3, 4} or z_i.shape[-3] != model.config.in_channels:
        msg = f"The latent mapping model expects {model.config.in_channels} latent channels, got shape {z_i.shape}."
        raise DimensionError(msg)
    x = T.reshape(z_i, (1, *z_i.shape)) if single else z_i
    out = model(x)
    return T.reshape(out, z_i.shape) if single else out


def count_trainable_params(model: Module) -> int:
    """Return the number of elements over the model's trainable tensors."""
    return sum(p.size for p in model.trainable_parameters())
