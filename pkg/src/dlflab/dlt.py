"""DLT1 binary tensor files.

Layout: 4 magic bytes ``DLT1``, one unsigned byte rank, ``rank``
little-endian uint32 dims, then the row-major little-endian float32
payload. Round-trips are bit-exact.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"DLT1"
_MAX_RANK = 32


def write_tensor(path, array) -> None:
    """Write a float32 array (or anything castable to one) to ``path``."""
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    if arr.ndim > _MAX_RANK:
        raise FormatError(f"{path}: rank {arr.ndim} exceeds DLT1 maximum {_MAX_RANK}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a DLT1 file back into a float32 array.

    Raises FormatError naming the file and byte offset on any corruption:
    bad magic, nonsensical dims, or a truncated/oversized payload.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 5:
        raise FormatError(f"{path}: truncated header at offset {len(blob)} (need 5 bytes)")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r} at offset 0")
    rank = blob[4]
    if rank > _MAX_RANK:
        raise FormatError(f"{path}: rank {rank} at offset 4 exceeds maximum {_MAX_RANK}")
    dims_end = 5 + 4 * rank
    if len(blob) < dims_end:
        raise FormatError(f"{path}: truncated dims at offset {len(blob)} (need {dims_end} bytes)")
    shape = struct.unpack(f"<{rank}I", blob[5:dims_end])
    if any(d == 0 for d in shape):
        raise FormatError(f"{path}: zero dimension in shape {shape} at offset 5")
    count = 1
    for d in shape:
        count *= d
    expected = dims_end + 4 * count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload size mismatch at offset {dims_end}: "
            f"have {len(blob) - dims_end} bytes, shape {shape} needs {4 * count}"
        )
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end)
    return flat.reshape(shape).copy()
