"""Deterministic synthetic patients with analytic ellipsoid lesions."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import ndimage

from ..config import get_settings
from ..errors import DataError, EmptyDatasetError, LesionPlacementError
from ..models import PatientRecord, SegMap, Volume
from ..schemas import SynthSpec
from .mvol import read_mvol, write_mvol

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"
Split = Literal["train", "val"]

_PLACEMENT_ATTEMPTS = 50
# Relative semi-axis scale of each nested core class (class 2, class 3, ...).
_CORE_SCALE = 0.3


@dataclass(frozen=True, slots=True)
class ManifestEntry:
    patient_id: str
    image_file: str
    truth_file: str
    split: Split
    fraction: float


def patient_id_for(index: int) -> str:
    return f"synth-{index:03d}"


def split_for(index: int, n_patients: int) -> Split:
    """Patient-level 80/20 split by index."""

    n_train = max(1, n_patients * 4 // 5)
    return "train" if index < n_train else "val"


def class_names_for(class_count: int) -> tuple[str, ...]:
    if class_count == 2:
        return ("background", "lesion")
    return ("background",) + tuple(f"lesion{label}" for label in range(1, class_count))


def _background(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    channels = []
    for _ in range(spec.channels):
        field = rng.standard_normal(spec.shape)
        if spec.smoothing > 0:
            field = ndimage.gaussian_filter(field, sigma=spec.smoothing, mode="reflect")
        std = field.std()
        channels.append((field - field.mean()) / (std if std > 0 else 1.0))
    return np.stack(channels, axis=-1)


def _ellipsoid(
    shape: tuple[int, int, int], centre: np.ndarray, axes: np.ndarray
) -> np.ndarray:
    grid = np.ogrid[tuple(slice(0, size) for size in shape)]
    total = sum(((coord - c) / a) ** 2 for coord, c, a in zip(grid, centre, axes))
    return total <= 1.0


def _lesion_axes(rng: np.random.Generator, volume: float) -> np.ndarray:
    ratios = rng.uniform(0.75, 1.25, size=3)
    radius = (volume / (4.0 / 3.0 * math.pi * float(np.prod(ratios)))) ** (1.0 / 3.0)
    return radius * ratios


def _place_lesions(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    shape = spec.shape
    dims = np.array(shape, dtype=np.float64)
    labels = np.zeros(shape, dtype=np.uint8)
    count = int(rng.integers(1, 4))
    weights = rng.uniform(0.7, 1.3, size=count)
    weights /= weights.sum()
    target = spec.lesion_fraction * float(np.prod(dims))

    for weight in weights:
        axes = _lesion_axes(rng, target * weight)
        if np.any(2.0 * axes > dims - 1.0):
            raise LesionPlacementError(
                f"lesion with semi-axes {np.round(axes, 2).tolist()} does not fit "
                f"in volume {shape}"
            )
        outer = None
        centre = axes
        for _ in range(_PLACEMENT_ATTEMPTS):
            centre = rng.uniform(axes, dims - 1.0 - axes)
            outer = _ellipsoid(shape, centre, axes)
            if not np.any(labels[outer]):
                break
        else:
            logger.warning("lesion overlaps an earlier one after %d attempts", _PLACEMENT_ATTEMPTS)
        assert outer is not None
        labels[outer & (labels == 0)] = 1
        for label in range(2, spec.class_count):
            core = _ellipsoid(shape, centre, axes * (1.0 - _CORE_SCALE * (label - 1)))
            labels[core & outer] = label
    return labels


def gen_patient(spec: SynthSpec, patient_index: int) -> PatientRecord:
    """Generate one patient; identical for identical ``(spec.seed, patient_index)``."""

    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, patient_index]))
    background = _background(rng, spec)
    labels = _place_lesions(rng, spec)
    std = background.reshape(-1, spec.channels).std(axis=0)
    offsets = spec.contrast * labels[..., np.newaxis].astype(np.float64) * std
    patient_id = patient_id_for(patient_index)
    volume = Volume(
        voxels=background + offsets,
        modality_names=tuple(f"mod{channel}" for channel in range(spec.channels)),
        patient_id=patient_id,
    )
    truth = SegMap(
        class_count=spec.class_count,
        labels=labels,
        class_names=class_names_for(spec.class_count),
    )
    fraction = float(np.count_nonzero(labels)) / labels.size
    logger.info(
        "SYNTH_PATIENT %s",
        json.dumps({"patient_id": patient_id, "fraction": fraction, "seed": spec.seed}),
    )
    return PatientRecord(patient_id=patient_id, volume=volume, truth=truth)


def foreground_fraction(truth: SegMap) -> float:
    labels = truth.as_labels()
    return float(np.count_nonzero(labels)) / labels.size


def gen_dataset(spec: SynthSpec, out_dir: str | Path) -> list[ManifestEntry]:
    """Write every patient as MVOL files plus a tab-separated manifest."""

    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    workers = max(1, min(get_settings().threads, spec.n_patients))

    def _write(index: int) -> ManifestEntry:
        record = gen_patient(spec, index)
        assert record.truth is not None
        image_file = f"{record.patient_id}_image.mvol"
        truth_file = f"{record.patient_id}_truth.mvol"
        write_mvol(record.volume, target / image_file)
        write_mvol(record.truth, target / truth_file)
        return ManifestEntry(
            patient_id=record.patient_id,
            image_file=image_file,
            truth_file=truth_file,
            split=split_for(index, spec.n_patients),
            fraction=foreground_fraction(record.truth),
        )

    with ThreadPoolExecutor(max_workers=workers) as pool:
        entries = list(pool.map(_write, range(spec.n_patients)))
    write_manifest(entries, spec, target / MANIFEST_NAME)
    return entries


def write_manifest(entries: list[ManifestEntry], spec: SynthSpec, path: Path) -> Path:
    lines = [
        "# refinegan synthetic dataset",
        f"# spec {json.dumps(spec.model_dump(), sort_keys=True)}",
        "# patient_id\tfiles\tsplit\tfraction",
    ]
    for entry in entries:
        lines.append(
            "\t".join(
                [
                    entry.patient_id,
                    f"{entry.image_file},{entry.truth_file}",
                    entry.split,
                    repr(entry.fraction),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(data_dir: str | Path) -> list[ManifestEntry]:
    path = Path(data_dir) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"dataset manifest not found: {path}")
    entries: list[ManifestEntry] = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise DataError(f"{path}:{number}: expected 4 tab-separated fields")
        patient_id, files, split, fraction = fields
        image_file, _, truth_file = files.partition(",")
        if split not in ("train", "val"):
            raise DataError(f"{path}:{number}: unknown split {split!r}")
        entries.append(
            ManifestEntry(
                patient_id=patient_id,
                image_file=image_file,
                truth_file=truth_file,
                split=split,  # type: ignore[arg-type]
                fraction=float(fraction),
            )
        )
    return entries


def load_dataset(data_dir: str | Path, split: Split | None = None) -> list[PatientRecord]:
    """Load the patients listed in ``data_dir``'s manifest, optionally one split only."""

    root = Path(data_dir)
    records = []
    for entry in read_manifest(root):
        if split is not None and entry.split != split:
            continue
        volume = read_mvol(root / entry.image_file, patient_id=entry.patient_id)
        truth = read_mvol(root / entry.truth_file) if entry.truth_file else None
        if not isinstance(volume, Volume) or (truth is not None and not isinstance(truth, SegMap)):
            raise DataError(f"unexpected MVOL content for patient {entry.patient_id}")
        records.append(PatientRecord(patient_id=entry.patient_id, volume=volume, truth=truth))
    if not records:
        raise EmptyDatasetError(f"no patients in {root} for split {split or 'all'}")
    return records


__all__ = [
    "MANIFEST_NAME",
    "ManifestEntry",
    "patient_id_for",
    "split_for",
    "class_names_for",
    "gen_patient",
    "foreground_fraction",
    "gen_dataset",
    "write_manifest",
    "read_manifest",
    "load_dataset",
]
