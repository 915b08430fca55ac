"""Binary array blobs.

Layout: magic ``QPI1``, then a little-endian u32 rank, ``rank`` little-endian
u32 dims, then the row-major float32 little-endian values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

BLOB_MAGIC = b"QPI1"


class BlobFormatError(Exception):
    """Raised when a blob file does not match the expected layout."""


def write_blob(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = BLOB_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_blob(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != BLOB_MAGIC:
        raise BlobFormatError(f"{path}: missing {BLOB_MAGIC!r} magic")
    (rank,) = struct.unpack_from("<I", raw, 4)
    if rank == 0 or rank > 8:
        raise BlobFormatError(f"{path}: implausible rank {rank}")
    header_end = 8 + 4 * rank
    if len(raw) < header_end:
        raise BlobFormatError(f"{path}: truncated dim header")
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) != header_end + 4 * count:
        raise BlobFormatError(
            f"{path}: expected {header_end + 4 * count} bytes for shape {shape}, found {len(raw)}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=header_end, count=count)
    return values.reshape(shape).copy()
