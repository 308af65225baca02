"""Intensity normalization and training-time augmentation."""
from __future__ import annotations

import logging
import math

import numpy as np
from scipy import ndimage

from ..errors import DegenerateStatisticsError, ShapeMismatchError, UsageError
from ..models import Volume
from ..schemas import AugmentParams, PreprocessConfig

logger = logging.getLogger(__name__)


def zscore(volume: Volume, foreground_mask: np.ndarray | None = None) -> Volume:
    """Standardise every channel to zero mean and unit population std.

    Statistics are taken over ``foreground_mask`` (shape ``(S,H,W)``) when
    given and applied to the whole volume.
    """

    voxels = volume.voxels.astype(np.float64)
    if foreground_mask is not None:
        mask = np.asarray(foreground_mask, dtype=bool)
        if mask.shape != volume.shape:
            raise ShapeMismatchError(
                f"mask shape {mask.shape} != volume shape {volume.shape}"
            )
        samples = voxels[mask]
    else:
        samples = voxels.reshape(-1, volume.channels)
    if samples.shape[0] == 0:
        raise DegenerateStatisticsError("foreground mask selects no voxels")

    mean = samples.mean(axis=0)
    std = samples.std(axis=0)
    flat = [index for index, value in enumerate(std) if not value > 0]
    if flat:
        names = [volume.modality_names[index] for index in flat]
        raise DegenerateStatisticsError(f"zero variance in channel(s) {names}")
    return volume.with_voxels((voxels - mean) / std)


def _window(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if not lo < hi:
        raise UsageError(f"window bounds must satisfy lo < hi, got [{lo}, {hi}]")
    clipped = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
    return (clipped - lo) / (hi - lo)


def hu_window(volume: Volume, lo: float = -100.0, hi: float = 400.0) -> Volume:
    """Clamp to ``[lo, hi]`` and rescale linearly onto ``[0, 1]``."""

    return volume.with_voxels(_window(volume.voxels, lo, hi))


def hist_equalize(
    image: np.ndarray,
    bins: int = 256,
    value_range: tuple[float, float] | None = None,
) -> np.ndarray:
    """Histogram-equalise one 2D slice onto ``[0, 1]``.

    The histogram spans ``value_range`` when given (the windowed ``[0, 1]``
    after HU windowing), else the slice's own ``[min, max]``. The mapping is
    ``(cdf - cdf_min) / (N - cdf_min)``. A constant slice maps to zeros.
    """

    values = np.asarray(image, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeMismatchError(f"hist_equalize expects a 2D slice, got {values.shape}")
    if value_range is None:
        lo, hi = float(values.min()), float(values.max())
    else:
        lo, hi = (float(bound) for bound in value_range)
        values = np.clip(values, lo, hi)
    if hi <= lo:
        return np.zeros_like(values)

    counts, _ = np.histogram(values, bins=bins, range=(lo, hi))
    cdf = np.cumsum(counts)
    cdf_min = cdf[np.flatnonzero(counts)[0]]
    total = cdf[-1]
    if total == cdf_min:
        return np.zeros_like(values)
    mapping = (cdf - cdf_min) / float(total - cdf_min)
    index = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    index = np.clip(index, 0, bins - 1)
    return np.clip(mapping[index], 0.0, 1.0)


def equalize_volume(
    volume: Volume,
    bins: int = 256,
    value_range: tuple[float, float] | None = None,
) -> Volume:
    """Apply :func:`hist_equalize` to every (slice, channel) plane."""

    voxels = volume.voxels
    out = np.empty(voxels.shape, dtype=np.float64)
    for index in range(voxels.shape[0]):
        for channel in range(voxels.shape[-1]):
            out[index, :, :, channel] = hist_equalize(
                voxels[index, :, :, channel], bins, value_range
            )
    return volume.with_voxels(out)


def preprocess_volume(volume: Volume, config: PreprocessConfig) -> Volume:
    """Run the configured intensity pipeline on one patient volume."""

    value_range = None
    if config.intensity == "zscore":
        volume = zscore(volume)
    elif config.intensity == "hu_window":
        volume = hu_window(volume, config.hu_lo, config.hu_hi)
        value_range = (0.0, 1.0)
    if config.hist_equalize:
        volume = equalize_volume(volume, config.equalize_bins, value_range)
    return volume


def geometric_transform(
    image: np.ndarray,
    mask: np.ndarray | None,
    angle_deg: float = 0.0,
    zoom: float = 1.0,
    shift: tuple[float, float] = (0.0, 0.0),
    image_order: int = 1,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Apply one rotation/zoom/shift about the slice centre to image and mask.

    ``image`` is ``(H, W, C)``, ``mask`` is ``(H, W)``. The image is resampled
    with spline order ``image_order``, the mask with nearest neighbour. Both
    use ``mode="nearest"`` at the borders.
    """

    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeMismatchError(f"image must be (H, W, C), got {image.shape}")
    if mask is not None and np.asarray(mask).shape != image.shape[:2]:
        raise ShapeMismatchError(
            f"mask shape {np.asarray(mask).shape} != image plane {image.shape[:2]}"
        )
    if zoom <= 0:
        raise UsageError(f"zoom must be positive, got {zoom}")

    theta = math.radians(angle_deg)
    rotation = np.array(
        [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
    )
    matrix = rotation / zoom
    centre = (np.array(image.shape[:2], dtype=np.float64) - 1.0) / 2.0
    offset = centre + np.asarray(shift, dtype=np.float64) - matrix @ centre

    channels = [
        ndimage.affine_transform(
            image[:, :, channel].astype(np.float64),
            matrix,
            offset=offset,
            order=image_order,
            mode="nearest",
        )
        for channel in range(image.shape[-1])
    ]
    out_image = np.stack(channels, axis=-1).astype(image.dtype, copy=False)
    out_mask = None
    if mask is not None:
        mask = np.asarray(mask)
        out_mask = ndimage.affine_transform(
            mask, matrix, offset=offset, order=0, mode="nearest"
        ).astype(mask.dtype, copy=False)
    return out_image, out_mask


def augment(
    image: np.ndarray,
    mask: np.ndarray | None,
    params: AugmentParams,
    seed: int | np.random.SeedSequence,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Randomly crop, rescale, rotate and add noise to one slice.

    Crop and scale are folded into a single zoom so the output keeps the
    input shape. Noise touches the image only.
    """

    image = np.asarray(image)
    if not params.any_enabled:
        return image.copy(), None if mask is None else np.asarray(mask).copy()

    rng = np.random.default_rng(seed)
    angle = 0.0
    zoom = 1.0
    shift = np.zeros(2)
    if params.rotation_enabled:
        angle = float(rng.uniform(-params.rotation_deg, params.rotation_deg))
    if params.scale_enabled:
        zoom *= float(rng.uniform(params.scale_min, params.scale_max))
    if params.crop_enabled:
        fraction = params.crop_fraction
        zoom /= fraction
        span = (1.0 - fraction) / 2.0
        shift = rng.uniform(-span, span, size=2) * (np.array(image.shape[:2]) - 1.0)

    out_image, out_mask = image, mask
    if params.rotation_enabled or params.scale_enabled or params.crop_enabled:
        out_image, out_mask = geometric_transform(
            image,
            mask,
            angle_deg=angle,
            zoom=zoom,
            shift=(float(shift[0]), float(shift[1])),
            image_order=params.image_order,
        )
    else:
        out_image = image.copy()
        out_mask = None if mask is None else np.asarray(mask).copy()
    if params.noise_enabled and params.noise_sigma > 0:
        noise = rng.normal(0.0, params.noise_sigma, size=out_image.shape)
        out_image = (out_image + noise).astype(image.dtype, copy=False)
    return out_image, out_mask


__all__ = [
    "zscore",
    "hu_window",
    "hist_equalize",
    "equalize_volume",
    "preprocess_volume",
    "geometric_transform",
    "augment",
]
