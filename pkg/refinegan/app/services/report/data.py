"""CSV rows written by training and evaluation and read back by the report."""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence, TypeVar

from ...errors import DataError
from ..metrics import METRIC_FIELDS, MetricReport

LOSS_COLUMNS = ("step", "epoch", "d_loss", "g_adv", "l1", "total")
REFINE_COLUMNS = ("step", "epoch", "bce_fp", "bce_fn", "total")
METRIC_COLUMNS = ("patient_id", "region") + METRIC_FIELDS


@dataclass(frozen=True, slots=True)
class LossRecord:
    """One generator/discriminator step of the adversarial stage."""

    step: int
    epoch: int
    d_loss: float
    g_adv: float
    l1: float
    total: float


@dataclass(frozen=True, slots=True)
class RefineRecord:
    step: int
    epoch: int
    bce_fp: float
    bce_fn: float
    total: float


@dataclass(frozen=True, slots=True)
class MetricRow:
    patient_id: str
    report: MetricReport


def _cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _write(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])
    return target


def _read(path: str | Path, header: Sequence[str]) -> list[dict[str, str]]:
    source = Path(path)
    if not source.exists():
        raise DataError(f"CSV file not found: {source}")
    with source.open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != tuple(header):
            raise DataError(f"{source}: expected columns {', '.join(header)}")
        return list(reader)


def _optional(value: str) -> float | None:
    return None if value == "" else float(value)


def write_loss_trace(records: Iterable[LossRecord], path: str | Path) -> Path:
    return _write(path, LOSS_COLUMNS, (astuple(record) for record in records))


def write_refine_trace(records: Iterable[RefineRecord], path: str | Path) -> Path:
    return _write(path, REFINE_COLUMNS, (astuple(record) for record in records))


def write_metric_csv(rows: Iterable[MetricRow], path: str | Path) -> Path:
    return _write(
        path,
        METRIC_COLUMNS,
        (
            [row.patient_id, row.report.region]
            + [getattr(row.report, name) for name in METRIC_FIELDS]
            for row in rows
        ),
    )


Record = TypeVar("Record", LossRecord, RefineRecord)


def _read_trace(path: str | Path, header: Sequence[str], cls: type[Record]) -> list[Record]:
    records = []
    for raw in _read(path, header):
        values = []
        for spec in fields(cls):
            text = raw[spec.name]
            values.append(int(text) if spec.name in ("step", "epoch") else float(text))
        records.append(cls(*values))
    return records


def read_loss_trace(path: str | Path) -> list[LossRecord]:
    return _read_trace(path, LOSS_COLUMNS, LossRecord)


def read_refine_trace(path: str | Path) -> list[RefineRecord]:
    return _read_trace(path, REFINE_COLUMNS, RefineRecord)


def read_metric_csv(path: str | Path) -> list[MetricRow]:
    rows = []
    for raw in _read(path, METRIC_COLUMNS):
        values = {name: _optional(raw[name]) for name in METRIC_FIELDS}
        rows.append(
            MetricRow(
                patient_id=raw["patient_id"],
                report=MetricReport(region=raw["region"], **values),  # type: ignore[arg-type]
            )
        )
    return rows


__all__ = [
    "LOSS_COLUMNS",
    "REFINE_COLUMNS",
    "METRIC_COLUMNS",
    "LossRecord",
    "RefineRecord",
    "MetricRow",
    "write_loss_trace",
    "write_refine_trace",
    "write_metric_csv",
    "read_loss_trace",
    "read_refine_trace",
    "read_metric_csv",
]
