"""Adversarial and L1 objectives, error masks and the composition rule.

Every function accepts NumPy arrays or torch tensors and returns the same
kind, so the training loop can differentiate through them while tests
compare against plain loops.
"""
from __future__ import annotations

from typing import TypeVar

import numpy as np
import torch

from ..errors import ShapeMismatchError
from ..models import ErrorMasks, SegMap, argmax_labels, one_hot_array
from ..schemas import LossWeights

PROB_CLAMP = 1e-7

Array = TypeVar("Array", np.ndarray, torch.Tensor)


def _values(x):
    if isinstance(x, SegMap):
        if x.probs is not None:
            return x.probs
        return one_hot_array(x.labels, x.class_count)
    if isinstance(x, torch.Tensor):
        return x
    return np.asarray(x, dtype=np.float64)


def _same_shape(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeMismatchError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def _clamp(x):
    if isinstance(x, torch.Tensor):
        return x.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    return np.clip(x, PROB_CLAMP, 1.0 - PROB_CLAMP)


def _log(x):
    return torch.log(x) if isinstance(x, torch.Tensor) else np.log(x)


def _clip01(x):
    if isinstance(x, torch.Tensor):
        return x.clamp(0.0, 1.0)
    return np.clip(x, 0.0, 1.0)


def _mean(x):
    if isinstance(x, torch.Tensor):
        return x.mean()
    return float(np.mean(x))


def d_loss(d_real, d_fake):
    """Discriminator loss ``mean(-log D(real) - log(1 - D(fake)))``."""

    d_real, d_fake = _values(d_real), _values(d_fake)
    _same_shape(d_real, d_fake, "d_loss")
    return _mean(-_log(_clamp(d_real)) - _log(1.0 - _clamp(d_fake)))


def g_adv_loss(d_fake):
    """Non-saturating generator loss ``mean(-log D(fake))``."""

    return _mean(-_log(_clamp(_values(d_fake))))


def l1_loss(pred, truth):
    pred, truth = _values(pred), _values(truth)
    _same_shape(pred, truth, "l1_loss")
    return _mean(abs(pred - truth))


def seg_loss(adv, l1, weights: LossWeights | float = 1.0):
    """``adv + lambda * l1``; ``lambda = 1`` is the plain sum."""

    lam = weights.lambda_l1 if isinstance(weights, LossWeights) else float(weights)
    return adv + lam * l1


def fn_mask(truth: Array, pred: Array) -> Array:
    """Pixels of a class the prediction misses: ``clip(truth - pred, 0, 1)``."""

    truth, pred = _values(truth), _values(pred)
    _same_shape(truth, pred, "fn_mask")
    return _clip01(truth - pred)


def fp_mask(truth: Array, pred: Array) -> Array:
    """Pixels wrongly given a class: ``clip(pred - truth, 0, 1)``."""

    truth, pred = _values(truth), _values(pred)
    _same_shape(truth, pred, "fp_mask")
    return _clip01(pred - truth)


def compose(pred: Array, fp: Array, fn: Array) -> Array:
    """Remove false positives and add false negatives: ``clip(pred - fp + fn, 0, 1)``."""

    pred, fp, fn = _values(pred), _values(fp), _values(fn)
    _same_shape(pred, fp, "compose")
    _same_shape(pred, fn, "compose")
    return _clip01(pred - fp + fn)


def finalize_labels(
    composed: np.ndarray,
    class_names: tuple[str, ...] = (),
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> SegMap:
    """Turn per-class maps ``(S, H, W, C)`` into hard labels.

    The lowest class index wins exact ties. A single foreground channel is
    thresholded at 0.5 into a two-class map.
    """

    if isinstance(composed, torch.Tensor):
        composed = composed.detach().cpu().numpy()
    values = np.asarray(composed)
    if values.ndim != 4:
        raise ShapeMismatchError(f"expected (S, H, W, C) maps, got {values.shape}")
    if values.shape[-1] == 1:
        labels = (values[..., 0] > 0.5).astype(np.uint8)
        class_count = 2
    else:
        labels = argmax_labels(values)
        class_count = values.shape[-1]
    return SegMap(
        class_count=class_count,
        labels=labels,
        class_names=class_names,
        spacing=spacing,
    )


def binarize(probs: np.ndarray) -> np.ndarray:
    """One-hot of the per-pixel argmax."""

    probs = np.asarray(probs)
    return one_hot_array(argmax_labels(probs), probs.shape[-1])


def error_mask_targets(truth_onehot: np.ndarray, probs: np.ndarray) -> ErrorMasks:
    """Refinement targets: error masks of the binarized prediction against truth."""

    truth = np.asarray(_values(truth_onehot), dtype=np.float32)
    hard = binarize(probs)
    _same_shape(truth, hard, "error_mask_targets")
    return ErrorMasks(
        fp=fp_mask(truth, hard).astype(np.float32),
        fn=fn_mask(truth, hard).astype(np.float32),
    )


def _bce(pred, target):
    pred = _clamp(pred)
    return _mean(-(target * _log(pred) + (1.0 - target) * _log(1.0 - pred)))


def refinement_bce_parts(pred_masks, targets: ErrorMasks | tuple):
    """Binary cross entropy of the (fp, fn) halves of a refinement output."""

    pred_masks = _values(pred_masks)
    fp_target, fn_target = (
        (targets.fp, targets.fn) if isinstance(targets, ErrorMasks) else targets
    )
    if isinstance(pred_masks, torch.Tensor):
        fp_target = torch.as_tensor(np.asarray(fp_target), dtype=pred_masks.dtype)
        fn_target = torch.as_tensor(np.asarray(fn_target), dtype=pred_masks.dtype)
    else:
        fp_target = np.asarray(fp_target, dtype=np.float64)
        fn_target = np.asarray(fn_target, dtype=np.float64)
    classes = pred_masks.shape[-1] // 2
    if pred_masks.shape[-1] != 2 * classes or tuple(fp_target.shape) != tuple(
        pred_masks[..., :classes].shape
    ):
        raise ShapeMismatchError(
            f"refinement output {tuple(pred_masks.shape)} does not match targets "
            f"{tuple(fp_target.shape)}"
        )
    _same_shape(fp_target, fn_target, "refinement targets")
    fp_pred, fn_pred = split_masks(pred_masks)
    return _bce(fp_pred, fp_target), _bce(fn_pred, fn_target)


def refinement_bce(pred_masks, targets: ErrorMasks | tuple):
    """Mean binary cross entropy over all ``2C`` refinement channels."""

    bce_fp, bce_fn = refinement_bce_parts(pred_masks, targets)
    return (bce_fp + bce_fn) / 2.0


def split_masks(pred_masks: Array) -> tuple[Array, Array]:
    classes = pred_masks.shape[-1] // 2
    return pred_masks[..., :classes], pred_masks[..., classes:]


__all__ = [
    "PROB_CLAMP",
    "d_loss",
    "g_adv_loss",
    "l1_loss",
    "seg_loss",
    "fn_mask",
    "fp_mask",
    "compose",
    "finalize_labels",
    "binarize",
    "error_mask_targets",
    "refinement_bce_parts",
    "refinement_bce",
    "split_masks",
]
