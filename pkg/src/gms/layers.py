"""Parameterized layers: convolution blocks, self-attention and initialization."""

from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError, UsageError
from .tensor import Tensor, record_op

if TYPE_CHECKING:
    from collections.abc import Iterator, Mapping, Sequence

    from .rng import Rng
    from .tensor import Gradient

DEFAULT_PRELU_SLOPE = 0.25


def default_num_groups(channels: int) -> int:
    """Group count used when none is given: 8, or ``channels`` if there are fewer than 8."""
    return 8 if channels >= 8 else channels


class Module:
    """Base class of all layers.

    A module owns named parameters and named child modules, both kept in
    registration order so that parameter enumeration (and therefore
    serialization and optimizer state) is deterministic.
    """

    def __init__(self) -> None:
        """Create an empty module."""
        self._parameters: dict[str, Tensor] = {}
        self._modules: dict[str, Module] = {}

    def register_parameter(self, name: str, value: np.ndarray) -> Tensor:
        """Create a trainable tensor owned by this module."""
        param = Tensor(value, requires_grad=True, name=name)
        self._parameters[name] = param
        return param

    def register_module(self, name: str, module: Module) -> Module:
        """Attach a child module."""
        self._modules[name] = module
        return module

    def modules(self) -> Iterator[Module]:
        """Yield this module and all descendants, depth first."""
        yield self
        for child in self._modules.values():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        """Yield ``(dotted_name, tensor)`` pairs in registration order."""
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, child in self._modules.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        """Return all parameters in registration order."""
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        """Return the parameters that currently require a gradient."""
        return [p for p in self.parameters() if p.requires_grad]

    def freeze(self) -> None:
        """Exclude every parameter from gradient computation."""
        for param in self.parameters():
            param.requires_grad = False

    def state_dict(self) -> dict[str, np.ndarray]:
        """Return copies of all parameter buffers keyed by dotted name."""
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """Overwrite parameter buffers in place.

        Raises:
            UsageError: If the names differ from this module's parameters.
            DimensionError: If a buffer has the wrong shape.
        """
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            msg = f"State does not match the module: missing {missing}, unexpected {unexpected}."
            raise UsageError(msg)
        for name, param in own.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                msg = f"Parameter {name!r} has shape {param.shape}, the state holds {value.shape}."
                raise DimensionError(msg)
            np.copyto(param.data, value.astype(param.dtype, copy=False))

    def forward(self, x: Tensor) -> Tensor:
        """Compute the module output."""
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        """Alias for :meth:`forward`."""
        return self.forward(x)


class Conv2d(Module):
    """A 2-D convolution with bias."""

    def __init__(
        self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1, padding: int = 0
    ) -> None:
        """Create a convolution; weights are zero until :func:`init_parameters` runs."""
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.padding = padding
        self.weight = self.register_parameter("weight", np.zeros((out_channels, in_channels, kernel_size, kernel_size)))
        self.bias = self.register_parameter("bias", np.zeros(out_channels))

    @property
    def fan_in(self) -> int:
        """Number of inputs feeding one output element."""
        _, cin, kh, kw = self.weight.shape
        return cin * kh * kw

    def forward(self, x: Tensor) -> Tensor:
        """Apply the convolution."""
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


def _channel_view(x: Tensor, vector: Tensor, what: str) -> tuple[int, ...]:
    if x.ndim < 2 or vector.shape != (x.shape[1],):
        channels = x.shape[1] if x.ndim >= 2 else "?"
        msg = f"{what} expects one value per channel (axis 1 of size {channels}), got shape {vector.shape}."
        raise DimensionError(msg)
    return (1, x.shape[1]) + (1,) * (x.ndim - 2)


def prelu(x: Tensor, a: Tensor) -> Tensor:
    """Parametric ReLU with a per-channel negative slope ``a``."""
    view = _channel_view(x, a, "prelu")
    xd = x.data
    slope = a.data.reshape(view)
    positive = xd > 0
    reduce_axes = tuple(i for i in range(xd.ndim) if i != 1)

    def _backward(g: np.ndarray) -> Sequence[Gradient]:
        gx = g * np.where(positive, 1.0, slope) if x.requires_grad else None
        ga = (g * np.where(positive, 0.0, xd)).sum(axis=reduce_axes) if a.requires_grad else None
        return gx, ga

    return record_op(np.where(positive, xd, slope * xd), "prelu", (x, a), _backward)


class PReLU(Module):
    """Per-channel PReLU activation."""

    def __init__(self, channels: int) -> None:
        """Create the slopes with the default value 0.25."""
        super().__init__()
        self.weight = self.register_parameter("weight", np.full(channels, DEFAULT_PRELU_SLOPE))

    def forward(self, x: Tensor) -> Tensor:
        """Apply the activation."""
        return prelu(x, self.weight)


def group_norm(x: Tensor, num_groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalization of an ``[N, C, H, W]`` tensor followed by a per-channel affine map.

    Args:
        x: The input.
        num_groups: Number of channel groups; must divide ``C``.
        gamma: Per-channel scale.
        beta: Per-channel shift.
        eps: Variance stabilizer.

    Returns:
        The normalized tensor.
    """
    if x.ndim != 4:
        msg = f"group_norm expects [N, C, H, W], got shape {x.shape}."
        raise DimensionError(msg)
    n, c, h, w = x.shape
    if num_groups < 1 or c % num_groups != 0:
        msg = f"group_norm: {num_groups} groups do not divide {c} channels."
        raise ConfigurationError(msg)
    view = _channel_view(x, gamma, "group_norm gamma")
    _channel_view(x, beta, "group_norm beta")

    grouped = x.data.reshape(n, num_groups, -1)
    mu = grouped.mean(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(grouped.var(axis=2, keepdims=True) + eps)
    x_hat = ((grouped - mu) * inv_std).reshape(n, c, h, w)
    gd = gamma.data.reshape(view)

    def _backward(g: np.ndarray) -> Sequence[Gradient]:
        ggamma = (g * x_hat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = (g * gd).reshape(n, num_groups, -1)
            xh = x_hat.reshape(n, num_groups, -1)
            gx = (
                inv_std
                * (dxhat - dxhat.mean(axis=2, keepdims=True) - xh * (dxhat * xh).mean(axis=2, keepdims=True))
            ).reshape(n, c, h, w)
        return gx, ggamma, gbeta

    out = x_hat * gd + beta.data.reshape(view)
    return record_op(out, "group_norm", (x, gamma, beta), _backward)


class GroupNorm(Module):
    """Group normalization with learned per-channel affine parameters."""

    def __init__(self, channels: int, num_groups: int | None = None, eps: float = 1e-5) -> None:
        """Create the layer.

        Raises:
            ConfigurationError: If ``num_groups`` does not divide ``channels``.
        """
        super().__init__()
        self.num_groups = default_num_groups(channels) if num_groups is None else num_groups
        if self.num_groups < 1 or channels % self.num_groups != 0:
            msg = f"GroupNorm: {self.num_groups} groups do not divide {channels} channels."
            raise ConfigurationError(msg)
        self.eps = eps
        self.weight = self.register_parameter("weight", np.ones(channels))
        self.bias = self.register_parameter("bias", np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        """Normalize ``x``."""
        return group_norm(x, self.num_groups, self.weight, self.bias, self.eps)


class ConvBlock(Module):
    """Conv (3x3, stride 1, pad 1) followed by PReLU and GroupNorm."""

    def __init__(
        self, in_channels: int, out_channels: int, kernel_size: int = 3, num_groups: int | None = None
    ) -> None:
        """Create the block."""
        super().__init__()
        if kernel_size % 2 != 1:
            msg = f"ConvBlock needs an odd kernel size to preserve spatial size, got {kernel_size}."
            raise ConfigurationError(msg)
        self.conv = Conv2d(in_channels, out_channels, kernel_size, stride=1, padding=kernel_size // 2)
        self.act = PReLU(out_channels)
        self.norm = GroupNorm(out_channels, num_groups)
        self.register_module("conv", self.conv)
        self.register_module("act", self.act)
        self.register_module("norm", self.norm)

    def forward(self, x: Tensor) -> Tensor:
        """Apply the block."""
        return conv_block_forward(x, self)


def conv_block_forward(x: Tensor, block: ConvBlock) -> Tensor:
    """Compute ``GN(PReLU(Conv(x)))``."""
    if x.ndim != 4 or x.shape[1] != block.conv.in_channels:
        msg = f"ConvBlock expects {block.conv.in_channels} channels on axis 1, got input shape {x.shape}."
        raise DimensionError(msg)
    return block.norm(block.act(block.conv(x)))


class SelfAttention2d(Module):
    """Single-head self-attention over the spatial positions of a feature map.

    Query, key and value come from 1x1 convolutions (``W * F + b``); the
    attended values are added back onto the input.
    """

    def __init__(self, channels: int, key_channels: int | None = None) -> None:
        """Create the layer; ``key_channels`` (d_k) defaults to ``channels``."""
        super().__init__()
        self.channels = channels
        self.key_channels = channels if key_channels is None else key_channels
        self.query = Conv2d(channels, self.key_channels, 1)
        self.key = Conv2d(channels, self.key_channels, 1)
        self.value = Conv2d(channels, channels, 1)
        self.register_module("query", self.query)
        self.register_module("key", self.key)
        self.register_module("value", self.value)

    @property
    def d_k(self) -> int:
        """Key channel count."""
        return self.key_channels

    wq = property(lambda self: self.query.weight, doc="Query projection weight.")
    wk = property(lambda self: self.key.weight, doc="Key projection weight.")
    wv = property(lambda self: self.value.weight, doc="Value projection weight.")
    bq = property(lambda self: self.query.bias, doc="Query projection bias.")
    bk = property(lambda self: self.key.bias, doc="Key projection bias.")
    bv = property(lambda self: self.value.bias, doc="Value projection bias.")

    def forward(self, x: Tensor) -> Tensor:
        """Apply attention with the residual connection."""
        return self_attention_forward(x, self)


def _attention(f: Tensor, attn: SelfAttention2d) -> tuple[Tensor, Tensor]:
    if f.ndim != 4 or f.shape[1] != attn.channels:
        msg = f"SelfAttention2d expects {attn.channels} channels on axis 1, got input shape {f.shape}."
        raise DimensionError(msg)
    n, c, h, w = f.shape
    length = h * w
    q = T.permute(T.reshape(attn.query(f), (n, attn.d_k, length)), (0, 2, 1))
    k = T.reshape(attn.key(f), (n, attn.d_k, length))
    v = T.permute(T.reshape(attn.value(f), (n, c, length)), (0, 2, 1))
    weights = T.softmax_lastdim(T.scale(T.matmul_batched(q, k), 1.0 / math.sqrt(attn.d_k)))
    attended = T.matmul_batched(weights, v)
    return weights, T.reshape(T.permute(attended, (0, 2, 1)), (n, c, h, w))


def self_attention_forward(f: Tensor, attn: SelfAttention2d) -> Tensor:
    """Compute ``f + softmax(Q K^T / sqrt(d_k)) V`` over flattened spatial positions."""
    _, attended = _attention(f, attn)
    return T.add(attended, f)


def attention_weights(f: Tensor, attn: SelfAttention2d) -> Tensor:
    """Return the ``[N, H*W, H*W]`` softmax map; row ``i`` holds the weights position ``i`` assigns."""
    with T.no_grad():
        weights, _ = _attention(f, attn)
    return weights


def init_parameters(layer: Module, rng: Rng) -> None:
    """Initialize every parameter of ``layer`` and its children.

    Convolution weights are drawn from ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``,
    biases and GroupNorm shifts are zero, GroupNorm scales are one and PReLU
    slopes are 0.25.
    """
    generator = rng.numpy()
    for module in layer.modules():
        if isinstance(module, Conv2d):
            bound = math.sqrt(6.0 / module.fan_in)
            module.weight.data[...] = generator.uniform(-bound, bound, size=module.weight.shape)
            module.bias.data[...] = 0.0
        elif isinstance(module, PReLU):
            module.weight.data[...] = DEFAULT_PRELU_SLOPE
        elif isinstance(module, GroupNorm):
            module.weight.data[...] = 1.0
            module.bias.data[...] = 0.0
