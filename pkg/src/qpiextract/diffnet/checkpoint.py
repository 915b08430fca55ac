"""Bit-exact weight checkpoints.

Layout: magic ``QPIW``, little-endian u32 format version, a length-prefixed
architecture identifier, a length-prefixed JSON metadata string (training
step counts, frozen flags, anything scalar), then a u32 block count followed
by ordered named blocks: u32 name length, UTF-8 name, u32 rank, u32 dims,
row-major float64 little-endian values.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"QPIW"
CHECKPOINT_VERSION = 1

_MAX_NAME = 4096
_MAX_RANK = 8


class CorruptCheckpointError(Exception):
    """Raised when a checkpoint file fails structural validation."""


@dataclass
class Checkpoint:
    arch_id: str
    blocks: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)


def encode_checkpoint(
    blocks: dict[str, np.ndarray],
    *,
    arch_id: str,
    metadata: dict | None = None,
) -> bytes:
    meta_bytes = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode()
    arch_bytes = arch_id.encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    parts.append(struct.pack("<I", len(arch_bytes)))
    parts.append(arch_bytes)
    parts.append(struct.pack("<I", len(meta_bytes)))
    parts.append(meta_bytes)
    parts.append(struct.pack("<I", len(blocks)))
    for name, array in blocks.items():
        arr = np.ascontiguousarray(array, dtype="<f8")
        name_bytes = name.encode()
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def write_checkpoint(
    path: str | Path,
    blocks: dict[str, np.ndarray],
    *,
    arch_id: str,
    metadata: dict | None = None,
) -> None:
    Path(path).write_bytes(encode_checkpoint(blocks, arch_id=arch_id, metadata=metadata))


class _Reader:
    def __init__(self, raw: bytes, label: str):
        self.raw = raw
        self.pos = 0
        self.label = label

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.raw):
            raise CorruptCheckpointError(f"{self.label}: truncated at byte {self.pos}")
        chunk = self.raw[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode_checkpoint(raw: bytes, label: str = "<bytes>") -> Checkpoint:
    path = label
    reader = _Reader(raw, label)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(f"{path}: missing {CHECKPOINT_MAGIC!r} magic")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported checkpoint version {version}")
    arch_len = reader.u32()
    if arch_len > _MAX_NAME:
        raise CorruptCheckpointError(f"{path}: implausible arch id length {arch_len}")
    arch_id = reader.take(arch_len).decode()
    meta_len = reader.u32()
    try:
        metadata = json.loads(reader.take(meta_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: bad metadata JSON: {exc}") from exc
    count = reader.u32()
    blocks: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = reader.u32()
        if name_len == 0 or name_len > _MAX_NAME:
            raise CorruptCheckpointError(f"{path}: implausible block name length {name_len}")
        name = reader.take(name_len).decode()
        rank = reader.u32()
        if rank > _MAX_RANK:
            raise CorruptCheckpointError(f"{path}: implausible rank {rank} for block {name!r}")
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank)) if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = reader.take(8 * size)
        if name in blocks:
            raise CorruptCheckpointError(f"{path}: duplicate block {name!r}")
        blocks[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    if reader.pos != len(raw):
        raise CorruptCheckpointError(f"{path}: {len(raw) - reader.pos} trailing bytes")
    return Checkpoint(arch_id=arch_id, blocks=blocks, metadata=metadata)


def read_checkpoint(path: str | Path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), str(path))
