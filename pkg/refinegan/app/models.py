"""Core domain model shared by every service.

All arrays use the channel-last layout ``(slice, row, col[, channel])``.
Instances are immutable: arrays are copied on construction and marked
read-only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import (
    DataError,
    LabelRangeError,
    NonFiniteVoxelsError,
    ShapeMismatchError,
    UsageError,
)


class AcquisitionPlane(str, Enum):
    """Slicing axis of a 3D volume."""

    AXIAL = "axial"
    CORONAL = "coronal"
    SAGITTAL = "sagittal"

    @classmethod
    def parse(cls, value: "str | AcquisitionPlane") -> "AcquisitionPlane":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError as exc:
            raise UsageError(f"unknown acquisition plane: {value!r}") from exc

    @property
    def axis(self) -> int:
        """Volume axis this plane slices along."""

        return list(AcquisitionPlane).index(self)


def _frozen(array: np.ndarray, dtype: np.dtype | type) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_spacing(spacing: Sequence[float]) -> tuple[float, float, float]:
    values = tuple(float(value) for value in spacing)
    if len(values) != 3:
        raise DataError(f"spacing must have 3 components, got {len(values)}")
    if any(not np.isfinite(value) or value <= 0 for value in values):
        raise DataError(f"spacing components must be positive, got {values}")
    return values  # type: ignore[return-value]


@dataclass(frozen=True, slots=True)
class Volume:
    """Multi-channel 3D intensity array of one patient."""

    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    modality_names: tuple[str, ...] = ()
    patient_id: str = ""

    def __post_init__(self) -> None:
        voxels = np.asarray(self.voxels)
        if voxels.ndim != 4:
            raise ShapeMismatchError(f"volume voxels must be 4D, got shape {voxels.shape}")
        if min(voxels.shape) < 1:
            raise ShapeMismatchError(f"volume dimensions must be >= 1, got {voxels.shape}")
        names = tuple(self.modality_names) or tuple(
            f"ch{index}" for index in range(voxels.shape[-1])
        )
        if len(names) != voxels.shape[-1]:
            raise ShapeMismatchError(
                f"{voxels.shape[-1]} channels but {len(names)} modality names"
            )
        if not np.all(np.isfinite(voxels)):
            raise NonFiniteVoxelsError(
                f"volume {self.patient_id or '<unnamed>'} contains NaN or Inf voxels"
            )
        object.__setattr__(self, "voxels", _frozen(voxels, np.float32))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        object.__setattr__(self, "modality_names", names)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.voxels.shape[:3])  # type: ignore[return-value]

    @property
    def channels(self) -> int:
        return int(self.voxels.shape[-1])

    def with_voxels(self, voxels: np.ndarray) -> "Volume":
        """Return a copy carrying new voxel values and the same metadata."""

        return Volume(
            voxels=voxels,
            spacing=self.spacing,
            modality_names=self.modality_names,
            patient_id=self.patient_id,
        )


@dataclass(frozen=True, slots=True)
class SegMap:
    """Segmentation as hard labels ``(S,H,W)`` or probabilities ``(S,H,W,C)``."""

    class_count: int
    labels: np.ndarray | None = None
    probs: np.ndarray | None = None
    class_names: tuple[str, ...] = ()
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if self.class_count < 2:
            raise DataError(f"class_count must be >= 2, got {self.class_count}")
        if (self.labels is None) == (self.probs is None):
            raise DataError("exactly one of labels or probs must be given")
        names = tuple(self.class_names) or tuple(
            f"class{index}" for index in range(self.class_count)
        )
        if len(names) != self.class_count:
            raise ShapeMismatchError(
                f"{self.class_count} classes but {len(names)} class names"
            )
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.ndim != 3:
                raise ShapeMismatchError(f"labels must be 3D, got shape {labels.shape}")
            if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
                raise LabelRangeError(
                    f"label values must lie in [0, {self.class_count}), "
                    f"got [{labels.min()}, {labels.max()}]"
                )
            object.__setattr__(self, "labels", _frozen(labels, np.uint8))
        else:
            probs = np.asarray(self.probs)
            if probs.ndim != 4 or probs.shape[-1] != self.class_count:
                raise ShapeMismatchError(
                    f"probs must be (S,H,W,{self.class_count}), got {probs.shape}"
                )
            if not np.all(np.isfinite(probs)) or probs.min() < 0 or probs.max() > 1:
                raise DataError("probabilities must be finite values in [0, 1]")
            if not np.allclose(probs.sum(axis=-1), 1.0, atol=1e-6, rtol=0.0):
                raise DataError("per-pixel class probabilities must sum to 1")
            object.__setattr__(self, "probs", _frozen(probs, probs.dtype))
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def is_labels(self) -> bool:
        return self.labels is not None

    @property
    def shape(self) -> tuple[int, int, int]:
        source = self.labels if self.labels is not None else self.probs
        assert source is not None
        return tuple(source.shape[:3])  # type: ignore[return-value]

    def as_labels(self) -> np.ndarray:
        """Return hard labels, taking the argmax for probability maps."""

        if self.labels is not None:
            return self.labels
        assert self.probs is not None
        return argmax_labels(self.probs)


@dataclass(frozen=True, slots=True)
class ErrorMasks:
    """Per-class false-positive / false-negative masks, channel-last."""

    fp: np.ndarray
    fn: np.ndarray

    def __post_init__(self) -> None:
        fp = np.asarray(self.fp)
        fn = np.asarray(self.fn)
        if fp.shape != fn.shape:
            raise ShapeMismatchError(f"fp {fp.shape} and fn {fn.shape} differ in shape")
        for name, mask in (("fp", fp), ("fn", fn)):
            if mask.size and (mask.min() < 0 or mask.max() > 1):
                raise DataError(f"{name} mask values must lie in [0, 1]")
        object.__setattr__(self, "fp", _frozen(fp, fp.dtype))
        object.__setattr__(self, "fn", _frozen(fn, fn.dtype))


@dataclass(frozen=True, slots=True)
class PatientRecord:
    patient_id: str
    volume: Volume
    truth: SegMap | None = None

    def __post_init__(self) -> None:
        if self.truth is not None and self.truth.shape != self.volume.shape:
            raise ShapeMismatchError(
                f"truth shape {self.truth.shape} != volume shape {self.volume.shape}"
            )


@dataclass(frozen=True, slots=True)
class SliceSequence:
    """2D slices ordered along one acquisition plane."""

    plane: AcquisitionPlane
    slices: np.ndarray
    source_shape: tuple[int, ...] = field(default=())

    def __len__(self) -> int:
        return int(self.slices.shape[0])


def _plane_permutation(plane: AcquisitionPlane, ndim: int) -> tuple[int, ...]:
    axis = AcquisitionPlane.parse(plane).axis
    spatial = [axis] + [index for index in range(3) if index != axis]
    return tuple(spatial) + tuple(range(3, ndim))


def _inverse(permutation: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(int(index) for index in np.argsort(permutation))


def extract_slices(volume: Volume, plane: AcquisitionPlane | str) -> SliceSequence:
    """Return the volume as slices ordered by increasing index along ``plane``."""

    plane = AcquisitionPlane.parse(plane)
    permutation = _plane_permutation(plane, 4)
    slices = np.ascontiguousarray(volume.voxels.transpose(permutation))
    return SliceSequence(plane=plane, slices=slices, source_shape=volume.voxels.shape)


def restack_slices(sequence: SliceSequence) -> np.ndarray:
    """Inverse of :func:`extract_slices` (and of :func:`extract_label_slices`)."""

    permutation = _plane_permutation(sequence.plane, sequence.slices.ndim)
    return np.ascontiguousarray(sequence.slices.transpose(_inverse(permutation)))


def extract_label_slices(labels: np.ndarray, plane: AcquisitionPlane | str) -> SliceSequence:
    """Slice a 3D label map (or 4D per-class map) along ``plane``."""

    plane = AcquisitionPlane.parse(plane)
    labels = np.asarray(labels)
    permutation = _plane_permutation(plane, labels.ndim)
    return SliceSequence(
        plane=plane,
        slices=np.ascontiguousarray(labels.transpose(permutation)),
        source_shape=labels.shape,
    )


def restack_label_slices(sequence: SliceSequence) -> np.ndarray:
    return restack_slices(sequence)


def argmax_labels(probs: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the last axis; the lowest class index wins ties."""

    return np.argmax(np.asarray(probs), axis=-1).astype(np.uint8)


def one_hot(labels: SegMap | np.ndarray, class_count: int | None = None) -> SegMap:
    """Expand a label map into a one-hot probability map."""

    if isinstance(labels, SegMap):
        if labels.labels is None:
            raise DataError("one_hot expects a label-form SegMap")
        values = labels.labels
        count = labels.class_count
        names = labels.class_names
        spacing = labels.spacing
    else:
        values = np.asarray(labels)
        if class_count is None:
            raise DataError("class_count is required for raw label arrays")
        count = class_count
        names = ()
        spacing = (1.0, 1.0, 1.0)
    if values.size and (values.min() < 0 or values.max() >= count):
        raise LabelRangeError(f"label values must lie in [0, {count})")
    probs = np.eye(count, dtype=np.float32)[values.astype(np.int64)]
    return SegMap(class_count=count, probs=probs, class_names=names, spacing=spacing)


def one_hot_array(labels: np.ndarray, class_count: int) -> np.ndarray:
    """Array-only one-hot for label arrays of any rank (no SegMap checks)."""

    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise LabelRangeError(f"label values must lie in [0, {class_count})")
    return np.eye(class_count, dtype=np.float32)[labels.astype(np.int64)]


__all__ = [
    "AcquisitionPlane",
    "Volume",
    "SegMap",
    "ErrorMasks",
    "PatientRecord",
    "SliceSequence",
    "extract_slices",
    "restack_slices",
    "extract_label_slices",
    "restack_label_slices",
    "argmax_labels",
    "one_hot",
    "one_hot_array",
]
