"""Deterministic random-stream derivation.

Every random draw in the package flows through a generator derived from a
master seed plus a path of stream labels, so any piece of work (one kernel,
one sample, one layer init, one batch of noise) owns an independent stream
that does not depend on generation order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _token(part: int | str) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.sha256(part.encode()).digest()[:8], "little")
    value = int(part)
    if value < 0:
        raise ValueError(f"stream path components must be non-negative, got {value}")
    return value


def derive_rng(master_seed: int, *path: int | str) -> np.random.Generator:
    """Counter-based generator for the stream (master_seed, *path).

    The same arguments always yield the same stream, independent of how many
    other streams were derived before.
    """
    if master_seed < 0:
        raise ValueError(f"master_seed must be non-negative, got {master_seed}")
    entropy = [int(master_seed)] + [_token(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
