"""Contour overlays of ground-truth and predicted masks."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from ..errors import DimensionError
from ..losses import boundary
from ..netpbm import to_uint8, write_ppm

if TYPE_CHECKING:
    from pathlib import Path

GROUND_TRUTH_COLOR = (0, 255, 0)
PREDICTION_COLOR = (255, 255, 0)


def contour_overlay(
    image: np.ndarray, gt: np.ndarray, pred: np.ndarray, path: str | Path | None = None
) -> np.ndarray:
    """Paint the boundaries of ``gt`` (green) and ``pred`` (yellow) onto an image.

    Where the two contours coincide the prediction is drawn on top.

    Args:
        image: ``[3, H, W]`` float image in [0, 1].
        gt: Binary ``[H, W]`` ground-truth mask.
        pred: Binary ``[H, W]`` predicted mask.
        path: If given, the overlay is also written there as P6.

    Returns:
        The ``[H, W, 3]`` uint8 raster.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        msg = f"Expected a [3, H, W] image, got shape {image.shape}."
        raise DimensionError(msg)
    if gt.shape != image.shape[1:] or pred.shape != image.shape[1:]:
        msg = f"Mask shapes {gt.shape} and {pred.shape} do not match the image size {image.shape[1:]}."
        raise DimensionError(msg)
    raster = to_uint8(np.transpose(image, (1, 2, 0)))
    raster[boundary(gt)] = GROUND_TRUTH_COLOR
    raster[boundary(pred)] = PREDICTION_COLOR
    if path is not None:
        write_ppm(path, raster, comment="green: ground truth, yellow: prediction")
    return raster
