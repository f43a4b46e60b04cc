"""GMS visualization helpers.

The contour overlay only needs numpy; the figure helpers require the ``visualization`` extra (plotly).
"""

from __future__ import annotations

from .overlay import GROUND_TRUTH_COLOR, PREDICTION_COLOR, contour_overlay
from .training_curves import plot_experiment_table, plot_loss_trace

__all__ = [
    "GROUND_TRUTH_COLOR",
    "PREDICTION_COLOR",
    "contour_overlay",
    "plot_experiment_table",
    "plot_loss_trace",
]
