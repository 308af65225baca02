import math
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

PROJECT_ROOT = Path(__file__).resolve().parents[2]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from refinegan.app.errors import ShapeMismatchError  # noqa: E402
from refinegan.app.models import ErrorMasks, SegMap  # noqa: E402
from refinegan.app.schemas import LossWeights  # noqa: E402
from refinegan.app.services.losses import (  # noqa: E402
    PROB_CLAMP,
    binarize,
    compose,
    d_loss,
    error_mask_targets,
    finalize_labels,
    fn_mask,
    fp_mask,
    g_adv_loss,
    l1_loss,
    refinement_bce,
    refinement_bce_parts,
    seg_loss,
)


def _probability_map(shape, seed=0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.01, 0.99, size=shape)


def _clamped(value: float) -> float:
    return min(max(value, PROB_CLAMP), 1.0 - PROB_CLAMP)


def test_d_loss_examples():
    perfect = d_loss(np.full((2, 4, 4, 1), 1 - 1e-7), np.full((2, 4, 4, 1), 1e-7))
    undecided = d_loss(np.full((2, 4, 4, 1), 0.5), np.full((2, 4, 4, 1), 0.5))

    assert perfect == pytest.approx(0.0, abs=1e-6)
    assert undecided == pytest.approx(2 * math.log(2), abs=1e-12)


def test_d_loss_matches_pixel_loop():
    real = _probability_map((2, 3, 3, 1), seed=1)
    fake = _probability_map((2, 3, 3, 1), seed=2)

    total = 0.0
    for r, f in zip(real.ravel(), fake.ravel()):
        total += -math.log(_clamped(r)) - math.log(1 - _clamped(f))

    assert d_loss(real, fake) == pytest.approx(total / real.size, abs=1e-9)
    with pytest.raises(ShapeMismatchError):
        d_loss(real, fake[:1])


def test_generator_adversarial_loss_examples_and_monotonicity():
    assert g_adv_loss(np.full((1, 2, 2, 1), 1 - 1e-7)) == pytest.approx(0.0, abs=1e-6)
    assert g_adv_loss(np.full((1, 2, 2, 1), 0.5)) == pytest.approx(math.log(2), abs=1e-12)

    fake = _probability_map((1, 4, 4, 1), seed=3)
    raised = fake.copy()
    raised[0, 1, 2, 0] += 0.005
    assert g_adv_loss(raised) < g_adv_loss(fake)


def test_l1_loss_examples_and_loop_oracle():
    truth = np.array([[[[1.0, 0.0]]]])

    assert l1_loss(truth, truth) == 0.0
    assert l1_loss(np.array([[[[0.5, 0.5]]]]), truth) == pytest.approx(0.5)

    pred = _probability_map((2, 3, 3, 3), seed=4)
    target = _probability_map((2, 3, 3, 3), seed=5)
    total = sum(abs(p - t) for p, t in zip(pred.ravel(), target.ravel()))
    assert l1_loss(pred, target) == pytest.approx(total / pred.size, abs=1e-9)


def test_l1_loss_accepts_segmaps():
    labels = np.array([[[0, 1]]], dtype=np.uint8)
    truth = SegMap(class_count=2, labels=labels)
    probs = SegMap(class_count=2, probs=np.array([[[[1.0, 0.0], [0.5, 0.5]]]]))

    assert l1_loss(probs, truth) == pytest.approx(0.25)


def test_seg_loss_examples():
    assert seg_loss(1.0, 2.0) == 3.0
    assert seg_loss(1.0, 2.0, LossWeights(lambda_l1=0.0)) == 1.0
    assert seg_loss(0.75, 0.1, LossWeights(lambda_l1=10.0)) == pytest.approx(1.75)


def test_losses_are_differentiable_on_tensors():
    d_fake = torch.full((1, 2, 2, 1), 0.3, requires_grad=True)

    loss = g_adv_loss(d_fake)
    loss.backward()

    assert float(loss) == pytest.approx(-math.log(0.3), rel=1e-6)
    assert torch.all(d_fake.grad < 0)


def test_error_mask_examples():
    assert fn_mask(np.array([1.0]), np.array([0.0]))[0] == 1.0
    assert fn_mask(np.array([0.0]), np.array([1.0]))[0] == 0.0
    assert fn_mask(np.array([1.0]), np.array([0.3]))[0] == pytest.approx(0.7)

    assert fp_mask(np.array([0.0]), np.array([1.0]))[0] == 1.0
    assert fp_mask(np.array([0.6]), np.array([0.6]))[0] == 0.0
    assert fp_mask(np.array([0.0]), np.array([0.4]))[0] == pytest.approx(0.4)


def test_compose_examples():
    pred = np.array([1.0, 0.0, 1.0, 0.0])
    truth = np.array([1.0, 1.0, 0.0, 0.0])
    fp = fp_mask(truth, pred)
    fn = fn_mask(truth, pred)

    np.testing.assert_array_equal(fp, [0, 0, 1, 0])
    np.testing.assert_array_equal(fn, [0, 1, 0, 0])
    np.testing.assert_array_equal(compose(pred, fp, fn), truth)
    np.testing.assert_array_equal(compose(pred, np.zeros(4), np.zeros(4)), pred)
    assert compose(np.array([1.0]), np.array([1.0]), np.array([0.0]))[0] == 0.0
    with pytest.raises(ShapeMismatchError):
        compose(pred, fp[:3], fn)


def test_compose_recovers_truth_from_exact_error_masks():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        truth = rng.integers(0, 2, size=(64, 64)).astype(np.float64)
        pred = rng.integers(0, 2, size=(64, 64)).astype(np.float64)
        fp = fp_mask(truth, pred)
        fn = fn_mask(truth, pred)

        np.testing.assert_array_equal(compose(pred, fp, fn), truth)
        assert not np.any(fp * fn)


def test_error_masks_are_dual_under_argument_swap():
    a = _probability_map((3, 5, 5, 2), seed=8)
    b = _probability_map((3, 5, 5, 2), seed=9)

    np.testing.assert_array_equal(fn_mask(a, b), fp_mask(b, a))


def test_finalize_labels_prefers_lowest_class_on_ties():
    composed = np.zeros((1, 1, 3, 3))
    composed[0, 0, 0] = [0.1, 0.8, 0.1]
    composed[0, 0, 1] = [0.2, 0.4, 0.4]
    composed[0, 0, 2] = [0.0, 0.0, 0.0]

    segmap = finalize_labels(composed, spacing=(1.0, 2.0, 3.0))

    np.testing.assert_array_equal(segmap.labels[0, 0], [1, 1, 0])
    assert segmap.class_count == 3
    assert segmap.spacing == (1.0, 2.0, 3.0)


def test_finalize_labels_thresholds_single_foreground_map():
    composed = np.array([0.2, 0.5, 0.51, 1.0]).reshape(1, 1, 4, 1)

    segmap = finalize_labels(composed)

    np.testing.assert_array_equal(segmap.labels.ravel(), [0, 0, 1, 1])
    assert segmap.class_count == 2


def test_binarize_is_one_hot_argmax():
    probs = np.array([[[[0.2, 0.5, 0.3], [0.6, 0.2, 0.2]]]])

    np.testing.assert_array_equal(binarize(probs), [[[[0, 1, 0], [1, 0, 0]]]])


def test_error_mask_targets_compare_binarized_prediction_with_truth():
    truth = np.array([[[[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]]])
    probs = np.array([[[[0.7, 0.3], [0.6, 0.4], [0.45, 0.55]]]])

    targets = error_mask_targets(truth, probs)

    np.testing.assert_array_equal(targets.fp[0, 0], [[0, 0], [1, 0], [0, 0]])
    np.testing.assert_array_equal(targets.fn[0, 0], [[0, 0], [0, 1], [0, 0]])

    exact = error_mask_targets(truth, truth)
    assert not np.any(exact.fp) and not np.any(exact.fn)


def test_refinement_bce_halves():
    targets = ErrorMasks(fp=np.zeros((1, 2, 2, 2)), fn=np.ones((1, 2, 2, 2)))
    pred = np.concatenate([np.full((1, 2, 2, 2), 0.5), np.full((1, 2, 2, 2), 0.25)], axis=-1)

    bce_fp, bce_fn = refinement_bce_parts(pred, targets)

    assert bce_fp == pytest.approx(math.log(2))
    assert bce_fn == pytest.approx(math.log(4))
    assert refinement_bce(pred, targets) == pytest.approx((math.log(2) + math.log(4)) / 2)
    with pytest.raises(ShapeMismatchError):
        refinement_bce(pred[..., :3], targets)


def test_loss_scalars_are_finite_and_non_negative_at_the_extremes():
    zeros = np.zeros((1, 2, 2, 1))
    ones = np.ones((1, 2, 2, 1))

    for value in (d_loss(zeros, ones), d_loss(ones, zeros), g_adv_loss(zeros), g_adv_loss(ones)):
        assert math.isfinite(value)
        assert value >= 0.0
