import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[2]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from refinegan.app.errors import EmptyDatasetError, LesionPlacementError  # noqa: E402
from refinegan.app.schemas import SynthSpec  # noqa: E402
from refinegan.app.services.mvol import read_mvol  # noqa: E402
from refinegan.app.services.synth import (  # noqa: E402
    MANIFEST_NAME,
    foreground_fraction,
    gen_dataset,
    gen_patient,
    load_dataset,
    read_manifest,
)


def _make_spec(**overrides) -> SynthSpec:
    values = dict(n_patients=10, slices=16, height=32, width=32, lesion_fraction=0.02, seed=7)
    values.update(overrides)
    return SynthSpec(**values)


def test_same_seed_and_index_give_identical_patients():
    spec = _make_spec()

    first = gen_patient(spec, 3)
    second = gen_patient(spec, 3)

    assert first.patient_id == second.patient_id == "synth-003"
    np.testing.assert_array_equal(first.volume.voxels, second.volume.voxels)
    np.testing.assert_array_equal(first.truth.labels, second.truth.labels)


@pytest.mark.parametrize("index", range(5))
def test_foreground_fraction_tracks_target(index):
    record = gen_patient(_make_spec(), index)

    assert 0.01 <= foreground_fraction(record.truth) <= 0.03
    assert record.volume.shape == (16, 32, 32)
    assert record.volume.channels == 2


def test_lesion_voxels_are_brighter_by_the_contrast():
    spec = _make_spec(smoothing=0.0)
    record = gen_patient(spec, 0)

    lesion = record.truth.labels > 0
    gap = record.volume.voxels[lesion].mean(axis=0) - record.volume.voxels[~lesion].mean(axis=0)

    assert np.all(gap > 0.5 * spec.contrast)


def test_lesion_that_cannot_fit_is_rejected():
    spec = _make_spec(slices=2, height=4, width=4, lesion_fraction=0.4)

    with pytest.raises(LesionPlacementError):
        gen_patient(spec, 0)


def test_contrast_must_be_positive():
    with pytest.raises(ValueError):
        _make_spec(contrast=0.0)


def test_multi_class_lesions_nest_inner_labels():
    spec = _make_spec(class_count=3, lesion_fraction=0.05)
    record = gen_patient(spec, 0)

    labels = record.truth.labels
    assert set(np.unique(labels)) == {0, 1, 2}
    assert record.truth.class_names == ("background", "lesion1", "lesion2")


def test_dataset_split_and_manifest_match_files(tmp_path):
    spec = _make_spec(slices=8, height=16, width=16, lesion_fraction=0.03)

    entries = gen_dataset(spec, tmp_path)

    assert [entry.split for entry in entries].count("train") == 8
    assert [entry.split for entry in entries].count("val") == 2
    assert (tmp_path / MANIFEST_NAME).exists()
    for entry in read_manifest(tmp_path):
        truth = read_mvol(tmp_path / entry.truth_file)
        assert entry.fraction == foreground_fraction(truth)


def test_different_seeds_change_voxels_but_not_shapes():
    first = gen_patient(_make_spec(seed=1), 0)
    second = gen_patient(_make_spec(seed=2), 0)

    assert first.volume.voxels.shape == second.volume.voxels.shape
    assert not np.array_equal(first.volume.voxels, second.volume.voxels)


def test_load_dataset_filters_by_split(tmp_path):
    gen_dataset(_make_spec(n_patients=5, slices=8, height=16, width=16, lesion_fraction=0.03), tmp_path)

    train = load_dataset(tmp_path, "train")
    val = load_dataset(tmp_path, "val")

    assert [record.patient_id for record in train] == [f"synth-00{index}" for index in range(4)]
    assert [record.patient_id for record in val] == ["synth-004"]
    assert all(record.truth is not None for record in train + val)


def test_load_dataset_rejects_empty_split(tmp_path):
    gen_dataset(_make_spec(n_patients=1, slices=8, height=16, width=16, lesion_fraction=0.03), tmp_path)

    with pytest.raises(EmptyDatasetError):
        load_dataset(tmp_path, "val")
