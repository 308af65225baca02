import sys
from pathlib import Path

import numpy as np
import pytest
import torch

PROJECT_ROOT = Path(__file__).resolve().parents[2]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from refinegan.app.errors import ShapeMismatchError, UsageError  # noqa: E402
from refinegan.app.models import (  # noqa: E402
    AcquisitionPlane,
    SliceSequence,
    Volume,
    argmax_labels,
    extract_slices,
    restack_label_slices,
)
from refinegan.app.schemas import NetConfig  # noqa: E402
from refinegan.app.services.inference import (  # noqa: E402
    generator_probs,
    predict,
    predict_from_checkpoints,
)
from refinegan.app.services.nets import (  # noqa: E402
    build_generator,
    build_refinement,
    save_checkpoint,
)


def _config(**overrides) -> NetConfig:
    values = dict(height=16, width=16, in_channels=2, class_count=3, depth=2, base_filters=4)
    values.update(overrides)
    return NetConfig(**values)


def _make_volume(shape=(16, 16, 16, 2), seed=0) -> Volume:
    rng = np.random.default_rng(seed)
    return Volume(
        voxels=rng.standard_normal(shape).astype(np.float32),
        spacing=(1.0, 0.8, 0.8),
        patient_id="p0",
    )


def _silent_refinement(config: NetConfig):
    refinement = build_refinement(config)
    with torch.no_grad():
        refinement.module.head.weight.zero_()
        refinement.module.head.bias.fill_(-50.0)
    return refinement


def test_prediction_without_refinement_is_generator_argmax():
    generator = build_generator(_config())
    volume = _make_volume((6, 16, 16, 2))

    segmap = predict(generator, volume, "axial")

    probs = generator_probs(generator, extract_slices(volume, "axial").slices)
    expected = restack_label_slices(
        SliceSequence(plane=AcquisitionPlane.AXIAL, slices=argmax_labels(probs))
    )
    np.testing.assert_array_equal(segmap.labels, expected)
    assert segmap.class_count == 3
    assert segmap.spacing == volume.spacing


def test_refinement_without_detections_changes_nothing():
    config = _config()
    generator = build_generator(config)
    volume = _make_volume((6, 16, 16, 2), seed=1)

    plain = predict(generator, volume)
    refined = predict(generator, volume, refinement=_silent_refinement(config))

    np.testing.assert_array_equal(refined.labels, plain.labels)


@pytest.mark.parametrize("plane", list(AcquisitionPlane))
def test_every_plane_restacks_to_volume_geometry(plane):
    generator = build_generator(_config(recurrent=True))
    volume = _make_volume(seed=2)

    segmap = predict(generator, volume, plane, chunk=5)

    assert segmap.labels.shape == volume.shape
    assert segmap.labels.max() < 3


def test_slice_size_must_match_network():
    generator = build_generator(_config())

    with pytest.raises(ShapeMismatchError):
        predict(generator, _make_volume((8, 16, 16, 2)), "coronal")
    with pytest.raises(UsageError):
        predict(
            generator,
            _make_volume((4, 16, 16, 2)),
            refinement=build_refinement(_config(class_count=2)),
        )


def test_test_time_noise_averaging_is_seeded():
    generator = build_generator(_config())
    slices = extract_slices(_make_volume((4, 16, 16, 2), seed=3), "axial").slices

    first = generator_probs(generator, slices, seed=11, tta_samples=3)
    again = generator_probs(generator, slices, seed=11, tta_samples=3)
    clean = generator_probs(generator, slices)

    np.testing.assert_array_equal(first, again)
    np.testing.assert_allclose(first.sum(axis=-1), 1.0, atol=1e-5)
    assert not np.array_equal(first, clean)


def test_checkpoint_prediction_matches_in_memory_networks(tmp_path):
    config = _config()
    generator = build_generator(config)
    refinement = build_refinement(config)
    volume = _make_volume((5, 16, 16, 2), seed=4)

    g_path = save_checkpoint(generator, tmp_path / "generator.pt", seed=7)
    r_path = save_checkpoint(refinement, tmp_path / "refinement.pt", seed=7)

    expected = predict(generator, volume, refinement=refinement)
    loaded = predict_from_checkpoints(g_path, volume, refine_checkpoint=r_path)

    np.testing.assert_array_equal(loaded.labels, expected.labels)


def test_running_mode_predicts_each_slice_from_running_averages():
    from refinegan.app.services.nets import forward, running_stats

    generator = build_generator(_config(norm_mode="running"))
    for _, layer in generator.norm_layers():
        with torch.no_grad():
            layer.running_mean.fill_(0.3)
            layer.running_var.fill_(2.0)
    slices = extract_slices(_make_volume((6, 16, 16, 2), seed=5), "axial").slices

    probs = generator_probs(generator, slices)

    expected = forward(generator, slices, stats=running_stats(generator))
    np.testing.assert_allclose(probs, expected, atol=1e-6)
    np.testing.assert_allclose(generator_probs(generator, slices[:3]), probs[:3], atol=1e-6)
