"""Utilities for turning loss and metric CSVs into reports."""

from .data import (
    LossRecord,
    MetricRow,
    RefineRecord,
    read_loss_trace,
    read_metric_csv,
    read_refine_trace,
    write_loss_trace,
    write_metric_csv,
    write_refine_trace,
)
from .analysis import epoch_losses, summarize_metrics
from .reporter import build_summary_md

__all__ = [
    "LossRecord",
    "MetricRow",
    "RefineRecord",
    "read_loss_trace",
    "read_metric_csv",
    "read_refine_trace",
    "write_loss_trace",
    "write_metric_csv",
    "write_refine_trace",
    "epoch_losses",
    "summarize_metrics",
    "build_summary_md",
]
