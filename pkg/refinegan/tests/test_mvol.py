import struct
import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[2]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from refinegan.app.errors import (  # noqa: E402
    DataError,
    MvolDtypeError,
    MvolFormatError,
    MvolMagicError,
    MvolTruncatedError,
)
from refinegan.app.models import SegMap, Volume  # noqa: E402
from refinegan.app.services.mvol import (  # noqa: E402
    MAGIC,
    decode_mvol,
    encode_mvol,
    read_mvol,
    write_mvol,
)


def _make_volume(shape=(3, 4, 5, 2)) -> Volume:
    rng = np.random.default_rng(5)
    return Volume(
        voxels=rng.standard_normal(shape).astype(np.float32),
        spacing=(1.0, 0.5, 2.5),
        modality_names=tuple(f"m{index}" for index in range(shape[-1])),
    )


def test_volume_round_trip_is_bit_exact(tmp_path):
    volume = _make_volume()

    path = write_mvol(volume, tmp_path / "image.mvol")
    loaded = read_mvol(path, patient_id="p-1")

    assert isinstance(loaded, Volume)
    assert loaded.voxels.tobytes() == volume.voxels.tobytes()
    assert loaded.spacing == volume.spacing
    assert loaded.modality_names == ("m0", "m1")
    assert loaded.patient_id == "p-1"


def test_label_round_trip_keeps_class_names(tmp_path):
    labels = np.random.default_rng(1).integers(0, 4, size=(2, 3, 4)).astype(np.uint8)
    segmap = SegMap(
        class_count=5,
        labels=labels,
        class_names=("bg", "a", "b", "c", "d"),
    )

    loaded = read_mvol(write_mvol(segmap, tmp_path / "truth.mvol"))

    assert isinstance(loaded, SegMap)
    np.testing.assert_array_equal(loaded.labels, labels)
    assert loaded.class_count == 5
    assert loaded.class_names == ("bg", "a", "b", "c", "d")


def test_header_layout_is_little_endian():
    volume = _make_volume((2, 2, 2, 1))

    data = encode_mvol(volume)

    assert data[:4] == MAGIC
    assert data[4] == 0 and data[5] == 4
    assert struct.unpack("<4I", data[6:22]) == (2, 2, 2, 1)


def test_three_dimensional_float_payload_gains_channel_axis():
    header = MAGIC + struct.pack("<BB3I3fH", 0, 3, 1, 2, 2, 1.0, 1.0, 1.0, 0)
    payload = np.arange(4, dtype="<f4").tobytes()

    volume = decode_mvol(header + payload)

    assert isinstance(volume, Volume)
    assert volume.voxels.shape == (1, 2, 2, 1)


def test_wrong_magic_is_a_format_error():
    data = bytearray(encode_mvol(_make_volume()))
    data[:4] = b"NOPE"

    with pytest.raises(MvolMagicError):
        decode_mvol(bytes(data))


def test_short_payload_is_a_truncation_error():
    data = encode_mvol(_make_volume((2, 2, 2, 1)))

    # header promises 8 floats, only 7 follow
    with pytest.raises(MvolTruncatedError):
        decode_mvol(data[:-4])


def test_unknown_dtype_code_is_rejected():
    data = bytearray(encode_mvol(_make_volume()))
    data[4] = 9

    with pytest.raises(MvolDtypeError):
        decode_mvol(bytes(data))


def test_trailing_bytes_and_bad_ndim_are_rejected():
    data = encode_mvol(_make_volume())

    with pytest.raises(MvolFormatError):
        decode_mvol(data + b"\x00")

    bad = bytearray(data)
    bad[5] = 2
    with pytest.raises(MvolFormatError):
        decode_mvol(bytes(bad))


def test_errors_are_distinct_types():
    assert len({MvolMagicError, MvolTruncatedError, MvolDtypeError}) == 3
    assert not issubclass(MvolMagicError, MvolTruncatedError)
    assert issubclass(MvolDtypeError, DataError)


def test_probability_maps_and_missing_files_are_data_errors(tmp_path):
    probs = SegMap(class_count=2, probs=np.full((1, 2, 2, 2), 0.5))

    with pytest.raises(DataError):
        write_mvol(probs, tmp_path / "probs.mvol")
    with pytest.raises(DataError):
        read_mvol(tmp_path / "missing.mvol")
