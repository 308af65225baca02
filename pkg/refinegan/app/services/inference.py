"""Whole-volume prediction with patient-wise normalization statistics."""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from ..errors import ShapeMismatchError, UsageError
from ..models import (
    AcquisitionPlane,
    SegMap,
    SliceSequence,
    Volume,
    extract_slices,
    restack_label_slices,
)
from ..schemas import PreprocessConfig
from . import losses
from .nets import NetHandle, collect_patient_stats, forward, load_checkpoint, running_stats
from .nets.networks import PatientStats
from .preprocess import preprocess_volume

logger = logging.getLogger(__name__)

MASK_THRESHOLD = 0.5


def _layer_stats(net: NetHandle, inputs: np.ndarray, chunk: int, noise: np.ndarray | None) -> PatientStats:
    if net.config.norm_mode == "running":
        return running_stats(net)
    return collect_patient_stats(net, inputs, chunk=chunk, noise=noise)


def _chunked(
    net: NetHandle,
    inputs: np.ndarray,
    stats: PatientStats,
    chunk: int,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    step = max(1, chunk)
    parts = []
    for start in range(0, inputs.shape[0], step):
        part_noise = None if noise is None else noise[start : start + step]
        parts.append(forward(net, inputs[start : start + step], stats=stats, noise=part_noise))
    return np.concatenate(parts, axis=0)


def generator_probs(
    generator: NetHandle,
    slices: np.ndarray,
    chunk: int = 32,
    seed: int = 0,
    tta_samples: int = 0,
    noise_sigma: float = 0.05,
) -> np.ndarray:
    """Per-pixel class probabilities ``(S, H, W, C)`` for one patient/plane.

    With ``tta_samples > 0`` the probabilities are averaged over the clean
    slices and that many copies with additive gaussian image noise.
    """

    rng = np.random.default_rng(seed)
    noise = None
    if generator.config.noise_input:
        noise = rng.standard_normal((*slices.shape[:3], 1)).astype(np.float32)
    generator.module.eval()
    stats = _layer_stats(generator, slices, chunk, noise)
    probs = _chunked(generator, slices, stats, chunk, noise).astype(np.float64)
    for _ in range(tta_samples):
        jitter = rng.normal(0.0, noise_sigma, size=slices.shape).astype(np.float32)
        probs += _chunked(generator, slices + jitter, stats, chunk, noise)
    return (probs / (tta_samples + 1)).astype(np.float32)


def refine_masks(
    refinement: NetHandle,
    slices: np.ndarray,
    probs: np.ndarray,
    chunk: int = 32,
) -> tuple[np.ndarray, np.ndarray]:
    """Binarized (fp, fn) masks predicted from ``image ++ probs``."""

    inputs = np.concatenate([slices, probs.astype(slices.dtype)], axis=-1)
    refinement.module.eval()
    stats = _layer_stats(refinement, inputs, chunk, None)
    masks = _chunked(refinement, inputs, stats, chunk)
    hard = (masks > MASK_THRESHOLD).astype(np.float32)
    return losses.split_masks(hard)


def predict(
    generator: NetHandle,
    volume: Volume,
    plane: AcquisitionPlane | str = AcquisitionPlane.AXIAL,
    refinement: NetHandle | None = None,
    preprocess: PreprocessConfig | None = None,
    tta_samples: int = 0,
    noise_sigma: float = 0.05,
    chunk: int = 32,
    seed: int = 0,
    class_names: tuple[str, ...] = (),
) -> SegMap:
    """Segment one volume along ``plane``.

    Without ``refinement`` the result is the argmax of the generator
    probabilities. With it, the binarized generator output has the
    predicted false positives removed and false negatives added.
    """

    started = time.perf_counter()
    plane = AcquisitionPlane.parse(plane)
    config = generator.config
    if refinement is not None and (
        refinement.config.class_count != config.class_count
        or refinement.config.in_channels != config.in_channels
    ):
        raise UsageError("refinement network does not match the generator's channels")
    prepared = preprocess_volume(volume, preprocess) if preprocess is not None else volume
    slices = extract_slices(prepared, plane).slices
    expected = (config.height, config.width, config.in_channels)
    if tuple(slices.shape[1:]) != expected:
        raise ShapeMismatchError(
            f"{plane.value} slices are {tuple(slices.shape[1:])}, networks expect {expected}"
        )

    probs = generator_probs(generator, slices, chunk, seed, tta_samples, noise_sigma)
    if refinement is None:
        maps = probs
    else:
        fp, fn = refine_masks(refinement, slices, probs, chunk)
        maps = losses.compose(losses.binarize(probs), fp, fn)
    if len(class_names) != max(2, config.class_count):
        class_names = ()
    sliced = losses.finalize_labels(maps, class_names, volume.spacing)
    assert sliced.labels is not None
    labels = restack_label_slices(SliceSequence(plane=plane, slices=sliced.labels))
    result = SegMap(
        class_count=sliced.class_count,
        labels=labels,
        class_names=sliced.class_names,
        spacing=volume.spacing,
    )
    logger.info(
        "PREDICT_DONE %s",
        json.dumps(
            {
                "patient_id": volume.patient_id,
                "plane": plane.value,
                "refined": refinement is not None,
                "slices": int(slices.shape[0]),
                "seconds": round(time.perf_counter() - started, 3),
            }
        ),
    )
    return result


def predict_from_checkpoints(
    cgan_checkpoint: str | Path,
    volume: Volume,
    plane: AcquisitionPlane | str = AcquisitionPlane.AXIAL,
    refine_checkpoint: str | Path | None = None,
    **kwargs,
) -> SegMap:
    generator, _ = load_checkpoint(cgan_checkpoint, kind="generator")
    refinement = None
    if refine_checkpoint is not None:
        refinement, _ = load_checkpoint(refine_checkpoint, kind="refinement")
    return predict(generator, volume, plane, refinement=refinement, **kwargs)


__all__ = [
    "MASK_THRESHOLD",
    "generator_probs",
    "refine_masks",
    "predict",
    "predict_from_checkpoints",
]
