"""Markdown report builder for training runs and evaluations."""

from __future__ import annotations

from datetime import datetime
from typing import Sequence

from .analysis import epoch_losses, summarize_metrics
from .data import LossRecord, MetricRow, RefineRecord

TABLE_METRICS = ("dice", "iou", "sensitivity", "fnr", "fpr", "hd95", "assd")


def _format_value(value: float | None) -> str:
    if value is None:
        return "—"
    return f"{value:.4f}"


def _render_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    if not rows:
        return ["(no rows)"]
    header_line = " | ".join(headers)
    separator = " | ".join(["---"] * len(headers))
    lines = [f"| {header_line} |", f"| {separator} |"]
    for row in rows:
        lines.append(f"| {' | '.join(row)} |")
    return lines


def _loss_rows(records: Sequence[LossRecord | RefineRecord]) -> list[list[str]]:
    return [
        [
            str(item.epoch),
            str(item.steps),
            _format_value(item.mean_total),
            _format_value(item.last_total),
        ]
        for item in epoch_losses(records)
    ]


def _metric_rows(metrics: Sequence[MetricRow]) -> list[list[str]]:
    rows = []
    for summary in summarize_metrics(metrics):
        cells = [summary.region, str(summary.patients)]
        for name in TABLE_METRICS:
            mean = summary.means[name]
            std = summary.stds[name]
            cells.append(
                "—" if mean is None else f"{_format_value(mean)} ± {_format_value(std)}"
            )
        rows.append(cells)
    return rows


def build_summary_md(
    losses: Sequence[LossRecord],
    metrics: Sequence[MetricRow],
    refine: Sequence[RefineRecord] = (),
    *,
    generated_at: datetime | None = None,
    plot_name: str | None = None,
) -> str:
    if not losses and not metrics and not refine:
        return "# refinegan report\n\nNo loss traces or metric files were found."

    lines: list[str] = ["# refinegan report"]
    if generated_at is not None:
        lines.append("**Generated**: " + generated_at.strftime("%Y-%m-%d %H:%M"))
    lines.append("")

    if losses:
        lines.append("## cGAN training")
        final = losses[-1]
        lines.append(
            f"- steps: {len(losses)}, final d_loss {_format_value(final.d_loss)}, "
            f"g_adv {_format_value(final.g_adv)}, l1 {_format_value(final.l1)}"
        )
        lines.extend(_render_table(["epoch", "steps", "mean total", "last total"], _loss_rows(losses)))
        lines.append("")

    if refine:
        lines.append("## Refinement training")
        final = refine[-1]
        lines.append(
            f"- steps: {len(refine)}, final bce_fp {_format_value(final.bce_fp)}, "
            f"bce_fn {_format_value(final.bce_fn)}"
        )
        lines.extend(_render_table(["epoch", "steps", "mean total", "last total"], _loss_rows(refine)))
        lines.append("")

    if plot_name:
        lines.append(f"![loss curves]({plot_name})")
        lines.append("")

    lines.append("## Metrics (mean ± std over patients)")
    lines.extend(_render_table(["region", "patients", *TABLE_METRICS], _metric_rows(metrics)))
    return "\n".join(lines)


__all__ = ["TABLE_METRICS", "build_summary_md"]
