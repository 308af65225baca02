"""Overlap, volume and surface-distance metrics computed from label maps.

Empty-mask conventions:

* both masks empty: dice = iou = 1, voe = 0
* exactly one empty: dice = iou = 0
* no positives in truth: sensitivity = 1 (fnr = 0)
* no negatives in truth: specificity = 1 (fpr = 0)
* empty truth: rvd is undefined (``None``)
* surface distances need two non-empty masks; otherwise they are absent
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from ..config import get_settings
from ..errors import ShapeMismatchError, UndefinedDistanceError, UsageError
from ..models import SegMap

logger = logging.getLogger(__name__)

ClassSpec = Mapping[str, Sequence[int]]


@dataclass(frozen=True, slots=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True, slots=True)
class SurfaceDistances:
    assd: float
    mssd: float
    hd_max: float
    hd95: float


@dataclass(frozen=True, slots=True)
class MetricReport:
    """All metrics of one class or composite region."""

    region: str
    dice: float
    iou: float
    voe: float
    rvd: float | None
    sensitivity: float
    specificity: float
    fnr: float
    fpr: float
    hd_max: float | None = None
    hd95: float | None = None
    assd: float | None = None
    mssd: float | None = None


METRIC_FIELDS = (
    "dice",
    "iou",
    "voe",
    "rvd",
    "sensitivity",
    "specificity",
    "fnr",
    "fpr",
    "hd_max",
    "hd95",
    "assd",
    "mssd",
)


def confusion_masks(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    """Counts for two boolean masks of equal shape."""

    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"pred {pred.shape} and truth {truth.shape} differ")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(pred.size) - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def confusion(pred: np.ndarray, truth: np.ndarray, class_index: int) -> ConfusionCounts:
    """One-vs-rest counts of ``class_index`` between two label maps."""

    pred = np.asarray(pred)
    truth = np.asarray(truth)
    return confusion_masks(pred == class_index, truth == class_index)


def dice(cc: ConfusionCounts) -> float:
    denominator = 2 * cc.tp + cc.fp + cc.fn
    return 1.0 if denominator == 0 else 2.0 * cc.tp / denominator


def iou(cc: ConfusionCounts) -> float:
    denominator = cc.tp + cc.fp + cc.fn
    return 1.0 if denominator == 0 else cc.tp / denominator


def voe(cc: ConfusionCounts) -> float:
    return 1.0 - iou(cc)


def rvd(pred_volume: float, truth_volume: float) -> float | None:
    """Relative volume difference ``(|pred| - |truth|) / |truth|``."""

    if truth_volume == 0:
        return None
    return (pred_volume - truth_volume) / truth_volume


def sensitivity(cc: ConfusionCounts) -> float:
    denominator = cc.tp + cc.fn
    return 1.0 if denominator == 0 else cc.tp / denominator


def specificity(cc: ConfusionCounts) -> float:
    denominator = cc.tn + cc.fp
    return 1.0 if denominator == 0 else cc.tn / denominator


def fnr(cc: ConfusionCounts) -> float:
    return 1.0 - sensitivity(cc)


def fpr(cc: ConfusionCounts) -> float:
    return 1.0 - specificity(cc)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with a face neighbour outside the mask (or on the array edge)."""

    mask = np.asarray(mask, dtype=bool)
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~eroded


def directed_distances(
    source: np.ndarray, target: np.ndarray, spacing: Sequence[float] | None = None
) -> np.ndarray:
    """Distance from every boundary voxel of ``source`` to the boundary of ``target``."""

    source_edge = boundary(source)
    target_edge = boundary(target)
    if not target_edge.any() or not source_edge.any():
        raise UndefinedDistanceError("surface distance of an empty mask is undefined")
    field = ndimage.distance_transform_edt(~target_edge, sampling=spacing)
    return field[source_edge]


def surface_distances(
    pred: np.ndarray,
    truth: np.ndarray,
    spacing: Sequence[float] | None = None,
) -> SurfaceDistances:
    """ASSD, MSSD and the max / 95th-percentile Hausdorff distances.

    Distances are Euclidean and scaled by ``spacing`` (unit when omitted).
    """

    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"pred {pred.shape} and truth {truth.shape} differ")
    if not pred.any() or not truth.any():
        raise UndefinedDistanceError("surface distance of an empty mask is undefined")
    if spacing is not None:
        spacing = tuple(float(value) for value in spacing)[-pred.ndim :]
    forward = directed_distances(pred, truth, spacing)
    reverse = directed_distances(truth, pred, spacing)
    pooled = np.concatenate([forward, reverse])
    assd = float(pooled.sum() / pooled.size)
    hd_max = float(max(forward.max(), reverse.max()))
    return SurfaceDistances(
        assd=assd,
        mssd=hd_max,
        hd_max=hd_max,
        hd95=float(np.percentile(pooled, 95, method="linear")),
    )


def region_report(
    region: str,
    pred: np.ndarray,
    truth: np.ndarray,
    spacing: Sequence[float] | None = None,
) -> MetricReport:
    """Every metric for one pair of binary masks."""

    cc = confusion_masks(pred, truth)
    distances: SurfaceDistances | None = None
    if cc.tp + cc.fp > 0 and cc.tp + cc.fn > 0:
        distances = surface_distances(pred, truth, spacing)
    return MetricReport(
        region=region,
        dice=dice(cc),
        iou=iou(cc),
        voe=voe(cc),
        rvd=rvd(cc.tp + cc.fp, cc.tp + cc.fn),
        sensitivity=sensitivity(cc),
        specificity=specificity(cc),
        fnr=fnr(cc),
        fpr=fpr(cc),
        hd_max=None if distances is None else distances.hd_max,
        hd95=None if distances is None else distances.hd95,
        assd=None if distances is None else distances.assd,
        mssd=None if distances is None else distances.mssd,
    )


def default_class_spec(truth: SegMap) -> dict[str, tuple[int, ...]]:
    """One region per foreground class, named after the class."""

    return {truth.class_names[label]: (label,) for label in range(1, truth.class_count)}


def brats_regions() -> dict[str, tuple[int, ...]]:
    """Whole tumour, tumour core and enhancing tumour over labels {1, 2, 3}."""

    return {"WT": (1, 2, 3), "TC": (1, 3), "ET": (3,)}


def evaluate(
    pred: SegMap,
    truth: SegMap,
    spacing: Sequence[float] | None = None,
    class_spec: ClassSpec | None = None,
) -> list[MetricReport]:
    """Per-region reports; a region is the union of the labels it lists."""

    pred_labels = pred.as_labels()
    truth_labels = truth.as_labels()
    if pred_labels.shape != truth_labels.shape:
        raise ShapeMismatchError(
            f"pred {pred_labels.shape} and truth {truth_labels.shape} differ"
        )
    spec = dict(class_spec) if class_spec is not None else default_class_spec(truth)
    for region, labels in spec.items():
        unknown = [label for label in labels if not 0 <= int(label) < truth.class_count]
        if not labels or unknown:
            raise UsageError(f"region {region!r} names unknown classes {unknown or labels}")
    spacing = tuple(truth.spacing) if spacing is None else tuple(spacing)

    def _one(item: tuple[str, Sequence[int]]) -> MetricReport:
        region, labels = item
        members = list(labels)
        return region_report(
            region,
            np.isin(pred_labels, members),
            np.isin(truth_labels, members),
            spacing,
        )

    workers = max(1, min(get_settings().threads, len(spec)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        reports = list(pool.map(_one, spec.items()))
    logger.info(
        "EVALUATE_DONE %s",
        json.dumps(
            {
                "regions": [report.region for report in reports],
                "shape": list(pred_labels.shape),
            }
        ),
    )
    return reports


__all__ = [
    "ClassSpec",
    "ConfusionCounts",
    "SurfaceDistances",
    "MetricReport",
    "METRIC_FIELDS",
    "confusion_masks",
    "confusion",
    "dice",
    "iou",
    "voe",
    "rvd",
    "sensitivity",
    "specificity",
    "fnr",
    "fpr",
    "boundary",
    "directed_distances",
    "surface_distances",
    "region_report",
    "default_class_spec",
    "brats_regions",
    "evaluate",
]
