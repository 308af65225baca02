"""Reader and writer for the MVOL binary volume format.

Layout (little-endian)::

    b"MVL1" | u8 dtype | u8 ndim | ndim x u32 dims | 3 x f32 spacing
    | u16 name-block length | UTF-8 names joined by ';' | row-major payload

dtype 0 stores float32 voxels (``Volume``), dtype 1 stores uint8 labels
(``SegMap`` in label form). For labels the name block carries the class
names, so the class count survives the round trip.
"""
from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from ..errors import (
    DataError,
    MvolDtypeError,
    MvolFormatError,
    MvolMagicError,
    MvolTruncatedError,
)
from ..models import SegMap, Volume

logger = logging.getLogger(__name__)

MAGIC = b"MVL1"
DTYPE_F32 = 0
DTYPE_U8 = 1

_NUMPY_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype("u1")}


def encode_mvol(obj: Volume | SegMap) -> bytes:
    """Serialise a volume or a label map to MVOL bytes."""

    if isinstance(obj, Volume):
        code = DTYPE_F32
        array = np.ascontiguousarray(obj.voxels, dtype=_NUMPY_DTYPES[DTYPE_F32])
        names = obj.modality_names
    elif isinstance(obj, SegMap):
        if obj.labels is None:
            raise DataError("only label-form segmentation maps can be written")
        code = DTYPE_U8
        array = np.ascontiguousarray(obj.labels, dtype=_NUMPY_DTYPES[DTYPE_U8])
        names = obj.class_names
    else:
        raise DataError(f"cannot encode {type(obj).__name__} as MVOL")

    if any(";" in name for name in names):
        raise DataError("channel names must not contain ';'")
    name_block = ";".join(names).encode("utf-8")
    if len(name_block) > 0xFFFF:
        raise DataError("channel-name block exceeds 65535 bytes")

    header = bytearray(MAGIC)
    header += struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    header += struct.pack("<3f", *obj.spacing)
    header += struct.pack("<H", len(name_block))
    header += name_block
    return bytes(header) + array.tobytes(order="C")


def decode_mvol(data: bytes) -> Volume | SegMap:
    """Parse MVOL bytes, raising a distinct error for each corruption kind."""

    view = memoryview(data)
    offset = 0

    def take(size: int, what: str) -> memoryview:
        nonlocal offset
        if offset + size > len(view):
            raise MvolTruncatedError(
                f"truncated {what}: need {size} bytes at offset {offset}, "
                f"have {len(view) - offset}"
            )
        chunk = view[offset : offset + size]
        offset += size
        return chunk

    if len(view) < len(MAGIC) or bytes(view[: len(MAGIC)]) != MAGIC:
        raise MvolMagicError("missing MVL1 magic bytes")
    offset = len(MAGIC)

    code, ndim = struct.unpack("<BB", take(2, "header"))
    if code not in _NUMPY_DTYPES:
        raise MvolDtypeError(f"unknown dtype code {code}")
    if ndim not in (3, 4):
        raise MvolFormatError(f"ndim must be 3 or 4, got {ndim}")
    if code == DTYPE_U8 and ndim != 3:
        raise MvolFormatError("label payloads must be 3D")
    dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dimensions"))
    spacing = struct.unpack("<3f", take(12, "spacing"))
    (name_length,) = struct.unpack("<H", take(2, "name-block length"))
    name_block = bytes(take(name_length, "name block")).decode("utf-8")
    names = tuple(name_block.split(";")) if name_block else ()

    dtype = _NUMPY_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    payload = take(count * dtype.itemsize, "payload")
    if offset != len(view):
        raise MvolFormatError(f"{len(view) - offset} trailing bytes after payload")
    array = np.frombuffer(payload, dtype=dtype, count=count).reshape(dims)

    if code == DTYPE_F32:
        if ndim == 3:
            array = array[..., np.newaxis]
        return Volume(voxels=array, spacing=spacing, modality_names=names)

    class_count = len(names) if names else max(2, int(array.max(initial=0)) + 1)
    return SegMap(
        class_count=class_count,
        labels=array,
        class_names=names,
        spacing=spacing,
    )


def write_mvol(obj: Volume | SegMap, path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_mvol(obj))
    logger.debug("wrote %s (%s)", target, type(obj).__name__)
    return target


def read_mvol(path: str | Path, patient_id: str = "") -> Volume | SegMap:
    """Read an MVOL file; volumes pick up ``patient_id`` when given."""

    source = Path(path)
    try:
        data = source.read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"MVOL file not found: {source}") from exc
    obj = decode_mvol(data)
    if isinstance(obj, Volume) and patient_id:
        obj = Volume(
            voxels=obj.voxels,
            spacing=obj.spacing,
            modality_names=obj.modality_names,
            patient_id=patient_id,
        )
    return obj


__all__ = [
    "MAGIC",
    "DTYPE_F32",
    "DTYPE_U8",
    "encode_mvol",
    "decode_mvol",
    "write_mvol",
    "read_mvol",
]
