"""Training losses (latent matching, soft Dice, their sum) and segmentation metrics (DSC, IoU, HD95)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any, NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from . import tensor as T
from .errors import ConfigurationError, DimensionError, ValidationError
from .tensor import Tensor

if TYPE_CHECKING:
    from collections.abc import Mapping

    from numpy.typing import ArrayLike

DICE_EPS = 1e-6
HD_PERCENTILE = 0.95


class Reduction(str, Enum):
    """How the squared latent difference is reduced."""

    sum = "sum"
    mean = "mean"


class LossMode(str, Enum):
    """The loss configurations of the ablation protocol."""

    lm = "lm"
    seg = "seg"
    both = "both"


@dataclass(frozen=True)
class LossConfig:
    """Which loss components are summed into the training objective."""

    use_lm: bool = True
    use_seg: bool = True
    lm_reduction: Reduction = Reduction.sum

    def __post_init__(self) -> None:
        """Validate the configuration."""
        object.__setattr__(self, "lm_reduction", Reduction(self.lm_reduction))
        if not (self.use_lm or self.use_seg):
            msg = "At least one loss component (latent matching or segmentation) must be enabled."
            raise ConfigurationError(msg)

    @classmethod
    def from_mode(cls, mode: str | LossMode, lm_reduction: str | Reduction = "sum") -> LossConfig:
        """Create the configuration for ``lm``, ``seg`` or ``both``."""
        mode = LossMode(mode)
        return cls(use_lm=mode != LossMode.seg, use_seg=mode != LossMode.lm, lm_reduction=Reduction(lm_reduction))

    @property
    def mode(self) -> LossMode:
        """The ablation label of this configuration."""
        if self.use_lm and self.use_seg:
            return LossMode.both
        return LossMode.lm if self.use_lm else LossMode.seg

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-compatible representation."""
        return {"use_lm": self.use_lm, "use_seg": self.use_seg, "lm_reduction": self.lm_reduction.value}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> LossConfig:
        """Inverse of :meth:`to_dict`."""
        return cls(**data)


def _check_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        msg = f"{what}: shapes {a.shape} and {b.shape} differ."
        raise DimensionError(msg)


def latent_matching_loss(z_m: Tensor, z_hat: Tensor, reduction: str | Reduction = "sum") -> Tensor:
    """Squared L2 distance between target and predicted latents.

    A 4-D input is treated as a batch: the loss of each sample is reduced
    separately and the batch loss is the mean over samples.
    """
    _check_same_shape(z_m, z_hat, "latent_matching_loss")
    mode = Reduction(reduction).value
    sq = T.square(T.subtract(z_hat, z_m))
    if z_hat.ndim == 4:
        return T.reduce(T.reduce(sq, mode, axes=(1, 2, 3)), "mean")
    return T.reduce(sq, mode)


def _check_binary(values: np.ndarray, what: str) -> None:
    if not np.isin(values, (0, 1)).all():
        msg = f"{what} must only contain the values 0 and 1."
        raise ValidationError(msg)


def soft_dice_loss(m: Tensor | ArrayLike, m_hat: Tensor) -> Tensor:
    """``1 - (2 sum(M * M_hat) + eps) / (sum(M) + sum(M_hat) + eps)`` with ``eps = 1e-6``.

    A 3-D input is treated as a batch ``[N, H, W]`` and the per-sample losses are averaged.

    Args:
        m: Binary ground-truth mask.
        m_hat: Predicted gray-scale mask in [0, 1].

    Returns:
        The scalar loss.
    """
    target = m if isinstance(m, Tensor) else Tensor(m)
    _check_same_shape(target, m_hat, "soft_dice_loss")
    _check_binary(target.data, "The ground-truth mask")
    if m_hat.size and (m_hat.data.min() < 0.0 or m_hat.data.max() > 1.0):
        msg = f"The predicted mask must lie in [0, 1], got values in [{m_hat.data.min()}, {m_hat.data.max()}]."
        raise ValidationError(msg)
    axes = (1, 2) if m_hat.ndim == 3 else None
    intersection = T.reduce(T.multiply(target, m_hat), "sum", axes)
    total = T.add(T.reduce(target, "sum", axes), T.reduce(m_hat, "sum", axes))
    ratio = T.divide(T.shift(T.scale(intersection, 2.0), DICE_EPS), T.shift(total, DICE_EPS))
    loss = T.shift(T.negate(ratio), 1.0)
    return T.reduce(loss, "mean") if axes is not None else loss


def loss_components(
    cfg: LossConfig,
    z_m: Tensor | None,
    z_hat: Tensor,
    m: Tensor | ArrayLike | None = None,
    m_hat: Tensor | None = None,
) -> dict[str, Tensor]:
    """Evaluate the enabled loss components, keyed ``"lm"`` and ``"seg"``."""
    components: dict[str, Tensor] = {}
    if cfg.use_lm:
        if z_m is None:
            msg = "The latent matching loss needs the encoded ground-truth mask."
            raise ConfigurationError(msg)
        components["lm"] = latent_matching_loss(z_m, z_hat, cfg.lm_reduction)
    if cfg.use_seg:
        if m is None or m_hat is None:
            msg = "The segmentation loss needs the ground-truth and the decoded gray-scale mask."
            raise ConfigurationError(msg)
        components["seg"] = soft_dice_loss(m, m_hat)
    return components


def compound_loss(
    cfg: LossConfig,
    z_m: Tensor | None,
    z_hat: Tensor,
    m: Tensor | ArrayLike | None = None,
    m_hat: Tensor | None = None,
) -> Tensor:
    """Unweighted sum of the enabled components.

    Raises:
        ConfigurationError: If both components are disabled.
    """
    if not (cfg.use_lm or cfg.use_seg):
        msg = "compound_loss needs at least one enabled component."
        raise ConfigurationError(msg)
    components = loss_components(cfg, z_m, z_hat, m, m_hat)
    if len(components) == 1:
        return next(iter(components.values()))
    return T.add(components["lm"], components["seg"])


@dataclass(frozen=True)
class MetricResult:
    """Segmentation quality of one prediction."""

    dsc: float
    iou: float
    hd95: float

    def to_dict(self) -> dict[str, float]:
        """Return a JSON-compatible representation."""
        return {"dsc": self.dsc, "iou": self.iou, "hd95": self.hd95}


class Overlap(NamedTuple):
    """Dice coefficient and intersection over union."""

    dsc: float
    iou: float


def _as_bool(mask: Tensor | ArrayLike) -> np.ndarray:
    values = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    return values > 0.5


def dsc_iou(m: Tensor | ArrayLike, m_hat_bin: Tensor | ArrayLike) -> Overlap:
    """Return the Dice coefficient and IoU of two binary masks (both 1 when both are empty)."""
    a = _as_bool(m)
    b = _as_bool(m_hat_bin)
    if a.shape != b.shape:
        msg = f"dsc_iou: shapes {a.shape} and {b.shape} differ."
        raise DimensionError(msg)
    inter = int(np.count_nonzero(a & b))
    size_a = int(np.count_nonzero(a))
    size_b = int(np.count_nonzero(b))
    if size_a + size_b == 0:
        return Overlap(1.0, 1.0)
    return Overlap(2.0 * inter / (size_a + size_b), inter / (size_a + size_b - inter))


def boundary(mask: Tensor | ArrayLike) -> np.ndarray:
    """Foreground pixels with a background 4-neighbour or on the image border."""
    fg = _as_bool(mask)
    padded = np.pad(fg, 1, constant_values=False)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return fg & ~interior


def _directed_percentile(src: np.ndarray, dst: np.ndarray) -> float:
    nearest = np.sort(cdist(src, dst).min(axis=1))
    rank = math.ceil(HD_PERCENTILE * len(nearest))
    return float(nearest[rank - 1])


def hd95(m: Tensor | ArrayLike, m_hat_bin: Tensor | ArrayLike) -> float:
    """95th-percentile symmetric Hausdorff distance between mask boundaries, in pixels.

    Each directed distance set holds, for every boundary pixel of one mask,
    the Euclidean distance to the nearest boundary pixel of the other; its 95th
    percentile is taken with the nearest-rank rule (the ``ceil(0.95 n)``-th
    smallest value). Two empty masks score 0; one empty mask scores the image diagonal.
    """
    a = boundary(m)
    b = boundary(m_hat_bin)
    if a.shape != b.shape:
        msg = f"hd95: shapes {a.shape} and {b.shape} differ."
        raise DimensionError(msg)
    pa = np.argwhere(a).astype(np.float64)
    pb = np.argwhere(b).astype(np.float64)
    if len(pa) == 0 and len(pb) == 0:
        return 0.0
    if len(pa) == 0 or len(pb) == 0:
        return math.hypot(*a.shape)
    return max(_directed_percentile(pa, pb), _directed_percentile(pb, pa))


def evaluate_masks(m: Tensor | ArrayLike, m_hat_bin: Tensor | ArrayLike) -> MetricResult:
    """Compute DSC, IoU and HD95 of a binary prediction."""
    overlap = dsc_iou(m, m_hat_bin)
    return MetricResult(overlap.dsc, overlap.iou, hd95(m, m_hat_bin))
