"""Test contour overlays and the plotly figures."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from gms.errors import DimensionError
from gms.netpbm import read_ppm
from gms.trainer import ExperimentTable
from gms.visualization import GROUND_TRUTH_COLOR, PREDICTION_COLOR, contour_overlay

if TYPE_CHECKING:
    from pathlib import Path


def test_contour_overlay_colors(tmp_path: Path) -> None:
    """Test that both contours are painted and the prediction wins where they meet."""
    image = np.full((3, 8, 8), 0.5, dtype=np.float32)
    gt = np.zeros((8, 8), dtype=np.uint8)
    gt[1:5, 1:5] = 1
    pred = np.zeros_like(gt)
    pred[1:5, 3:7] = 1
    path = tmp_path / "overlay.ppm"
    raster = contour_overlay(image, gt, pred, path)

    assert raster.shape == (8, 8, 3)
    assert tuple(raster[2, 1]) == GROUND_TRUTH_COLOR
    assert tuple(raster[2, 6]) == PREDICTION_COLOR
    assert tuple(raster[1, 3]) == PREDICTION_COLOR
    assert tuple(raster[2, 2]) == (128, 128, 128)
    assert tuple(raster[7, 7]) == (128, 128, 128)
    np.testing.assert_array_equal(read_ppm(path), raster)


def test_contour_overlay_shape_checks() -> None:
    """Test the image and mask shape checks."""
    with pytest.raises(DimensionError):
        contour_overlay(np.zeros((8, 8)), np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(DimensionError):
        contour_overlay(np.zeros((3, 8, 8)), np.zeros((8, 8)), np.zeros((4, 4)))


def test_plot_loss_trace() -> None:
    """Test the training trace figure."""
    pytest.importorskip("plotly")
    from gms.visualization import plot_loss_trace

    fig = plot_loss_trace([{"epoch": 1, "loss": 2.0, "val_dsc": 0.4}, {"epoch": 2, "loss": 1.0, "val_dsc": 0.6}])
    assert [trace.name for trace in fig.data] == ["loss", "validation DSC"]
    assert list(fig.data[0].y) == [2.0, 1.0]
    assert len(plot_loss_trace([{"epoch": 1, "loss": 2.0}]).data) == 1


def test_plot_experiment_table() -> None:
    """Test the experiment bar chart."""
    pytest.importorskip("plotly")
    from gms.visualization import plot_experiment_table

    table = ExperimentTable(
        "cross-domain",
        ["train", "test", "dsc", "kind"],
        [
            {"train": "A", "test": "A", "dsc": 0.9, "kind": "in-domain"},
            {"train": "A", "test": "B", "dsc": 0.6, "kind": "cross-domain"},
        ],
    )
    fig = plot_experiment_table(table)
    assert list(fig.data[0].x) == ["A / A / in-domain", "A / B / cross-domain"]
    assert list(fig.data[0].y) == [0.9, 0.6]
