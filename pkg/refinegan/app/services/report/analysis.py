"""Summaries of loss traces and per-patient metric rows."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..metrics import METRIC_FIELDS
from .data import LossRecord, MetricRow, RefineRecord


@dataclass(frozen=True, slots=True)
class EpochLoss:
    epoch: int
    steps: int
    mean_total: float
    last_total: float


@dataclass(frozen=True, slots=True)
class RegionSummary:
    """Mean and spread of every metric over the patients of one region."""

    region: str
    patients: int
    means: dict[str, float | None]
    stds: dict[str, float | None]


def epoch_losses(records: Iterable[LossRecord | RefineRecord]) -> list[EpochLoss]:
    grouped: dict[int, list[float]] = defaultdict(list)
    for record in records:
        grouped[record.epoch].append(record.total)
    return [
        EpochLoss(
            epoch=epoch,
            steps=len(totals),
            mean_total=sum(totals) / len(totals),
            last_total=totals[-1],
        )
        for epoch, totals in sorted(grouped.items())
    ]


def _mean_std(values: Sequence[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    mean = sum(values) / len(values)
    variance = sum((value - mean) ** 2 for value in values) / len(values)
    return mean, math.sqrt(variance)


def summarize_metrics(rows: Iterable[MetricRow]) -> list[RegionSummary]:
    """Per-region mean/std; undefined values (empty masks) are skipped."""

    grouped: dict[str, list[MetricRow]] = defaultdict(list)
    for row in rows:
        grouped[row.report.region].append(row)

    summaries = []
    for region, items in grouped.items():
        means: dict[str, float | None] = {}
        stds: dict[str, float | None] = {}
        for name in METRIC_FIELDS:
            values = [
                float(value)
                for value in (getattr(item.report, name) for item in items)
                if value is not None
            ]
            means[name], stds[name] = _mean_std(values)
        summaries.append(
            RegionSummary(region=region, patients=len(items), means=means, stds=stds)
        )
    return summaries


__all__ = ["EpochLoss", "RegionSummary", "epoch_losses", "summarize_metrics"]
