"""Plotly figures for training traces and experiment tables."""

from __future__ import annotations

from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    import plotly.graph_objects as go

    from ..trainer import ExperimentTable


def _graph_objects() -> Any:  # noqa: ANN401
    try:
        import plotly.graph_objects as go
    except ImportError as err:
        msg = "Plotting requires the 'visualization' extra: pip install gms[visualization]"
        raise ImportError(msg) from err
    return go


def plot_loss_trace(epochs: Sequence[Mapping[str, Any]], title: str = "Training") -> go.Figure:
    """Plot the mean training loss and, if recorded, the validation DSC per epoch.

    Args:
        epochs: The per-epoch entries of a training run (``TrainResult.epochs``).
        title: Figure title.
    """
    go = _graph_objects()
    x = [e["epoch"] for e in epochs]
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=x, y=[e["loss"] for e in epochs], mode="lines", name="loss"))
    if any("val_dsc" in e for e in epochs):
        fig.add_trace(
            go.Scatter(
                x=[e["epoch"] for e in epochs if "val_dsc" in e],
                y=[e["val_dsc"] for e in epochs if "val_dsc" in e],
                mode="lines+markers",
                name="validation DSC",
                yaxis="y2",
            )
        )
    fig.update_layout(
        title=title,
        xaxis={"title": "epoch"},
        yaxis={"title": "loss"},
        yaxis2={"title": "DSC", "overlaying": "y", "side": "right", "range": [0, 1]},
    )
    return fig


def plot_experiment_table(table: ExperimentTable, metric: str = "dsc") -> go.Figure:
    """Bar chart of one metric over the rows of an experiment table."""
    go = _graph_objects()
    labels = [" / ".join(row[c] for c in table.columns if isinstance(row.get(c), str)) for row in table.rows]
    fig = go.Figure(go.Bar(x=labels, y=[row[metric] for row in table.rows], name=metric))
    fig.update_layout(title=table.name, yaxis={"title": metric})
    return fig
