"""Phenomenological single-scatterer kernel model and observation synthesis.

A kernel is the interference pattern rippling out of one point defect:

    value(r, theta) = sin^2(a * theta + angular_phase)
                    * sin^2(radial_freq * r + radial_phase)
                    * exp(-decay * r^2)

where ``a = fold_count / 2`` selects the rotational symmetry (0 meaning full
rotational symmetry) and ``r`` is measured in pixels.  A multi-defect
observation is the plain sum of one kernel copy centred on every defect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng import derive_rng

IMAGE_SIZE = 64
CENTER = IMAGE_SIZE // 2

FOLD_COUNTS = (0, 2, 3, 4, 6)
MAX_DEFECTS = 100

ANGULAR_PHASE_RANGE = (0.0, math.pi)
RADIAL_FREQ_RANGE = (0.2, 0.9)
RADIAL_PHASE_RANGE = (0.0, math.pi)
DECAY_RANGE = (0.003, 0.02)

# Field samples are snapped onto this fixed dyadic grid before any
# superposition.  Every snapped value is an integer multiple of 2**-45 in
# [0, 1], so a float64 sum over up to MAX_DEFECTS copies stays below 2**52
# grid units and is exact: observations do not depend on the order in which
# defect contributions are added, and linearity holds at the bit level.
FIELD_QUANTUM = 2.0**-45


@dataclass(frozen=True)
class KernelParams:
    """Free parameters of one scattering kernel."""

    fold_count: int
    angular_phase: float
    radial_freq: float
    radial_phase: float
    decay: float

    def __post_init__(self) -> None:
        if self.fold_count not in FOLD_COUNTS:
            raise ValueError(f"fold_count must be one of {FOLD_COUNTS}, got {self.fold_count}")
        if self.fold_count == 0 and self.angular_phase != math.pi / 2:
            raise ValueError("fully rotation-symmetric kernels require angular_phase == pi/2")
        if not 0.0 <= self.angular_phase < math.pi:
            raise ValueError(f"angular_phase must lie in [0, pi), got {self.angular_phase}")
        if not 0.0 <= self.radial_phase < math.pi:
            raise ValueError(f"radial_phase must lie in [0, pi), got {self.radial_phase}")
        if self.radial_freq <= 0.0:
            raise ValueError(f"radial_freq must be positive, got {self.radial_freq}")
        if self.decay <= 0.0:
            raise ValueError(f"decay must be positive, got {self.decay}")

    @property
    def angular_freq(self) -> float:
        """Angular frequency of the sin^2 factor; fold_count / 2 exactly."""
        return self.fold_count / 2.0


def evaluate_kernel(params: KernelParams, r, theta):
    """Kernel value at polar offset (r, theta) from the defect.

    Accepts scalars or broadcastable arrays; the result is always in [0, 1].
    """
    angular = np.sin(params.angular_freq * np.asarray(theta, dtype=np.float64) + params.angular_phase)
    radial = np.sin(params.radial_freq * np.asarray(r, dtype=np.float64) + params.radial_phase)
    envelope = np.exp(-params.decay * np.square(np.asarray(r, dtype=np.float64)))
    out = np.square(angular) * np.square(radial) * envelope
    if np.isscalar(r) and np.isscalar(theta):
        return float(out)
    return out


def _snap_to_grid(values: np.ndarray) -> np.ndarray:
    return np.round(values / FIELD_QUANTUM) * FIELD_QUANTUM


def kernel_patch(params: KernelParams, radius: int = IMAGE_SIZE - 1) -> np.ndarray:
    """Grid-snapped kernel values on a square patch of pixel offsets.

    The returned array has shape (2*radius+1, 2*radius+1) with the defect at
    index (radius, radius); theta is taken as 0 at the defect pixel itself
    (atan2(0, 0) == 0).
    """
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    dy = offsets[:, None]
    dx = offsets[None, :]
    return _snap_to_grid(evaluate_kernel(params, np.hypot(dx, dy), np.arctan2(dy, dx)))


def kernel_field(params: KernelParams, row: int, col: int) -> np.ndarray:
    """Grid-snapped kernel image for a defect at integer pixel (row, col).

    Implemented as a window of the full offset patch so that every defect
    position shares one set of evaluated samples.
    """
    if not (0 <= row < IMAGE_SIZE and 0 <= col < IMAGE_SIZE):
        raise ValueError(f"defect ({row}, {col}) outside the {IMAGE_SIZE}x{IMAGE_SIZE} image")
    return _field_window(kernel_patch(params), row, col).copy()


def _field_window(patch: np.ndarray, row: int, col: int) -> np.ndarray:
    top = (IMAGE_SIZE - 1) - row
    left = (IMAGE_SIZE - 1) - col
    return patch[top : top + IMAGE_SIZE, left : left + IMAGE_SIZE]


def rasterize_kernel(params: KernelParams) -> np.ndarray:
    """64x64 image of the kernel centred on pixel (CENTER, CENTER)."""
    return kernel_field(params, CENTER, CENTER)


def sample_kernel_params(rng_seed: int, index: int, total: int) -> KernelParams:
    """Draw the parameters of kernel ``index`` out of ``total``.

    Fold counts cycle through FOLD_COUNTS so each class receives exactly
    total / 5 kernels; the remaining parameters are uniform over their
    physically sensible ranges.  Deterministic in (rng_seed, index).
    """
    if total <= 0 or total % len(FOLD_COUNTS) != 0:
        raise ValueError(f"total kernel count must be a positive multiple of {len(FOLD_COUNTS)}, got {total}")
    if not 0 <= index < total:
        raise ValueError(f"index must lie in [0, {total}), got {index}")
    fold = FOLD_COUNTS[index % len(FOLD_COUNTS)]
    rng = derive_rng(rng_seed, "kernel-params", index)
    angular_phase = rng.uniform(*ANGULAR_PHASE_RANGE)
    radial_freq = rng.uniform(*RADIAL_FREQ_RANGE)
    radial_phase = rng.uniform(*RADIAL_PHASE_RANGE)
    decay = rng.uniform(*DECAY_RANGE)
    if fold == 0:
        angular_phase = math.pi / 2
    return KernelParams(
        fold_count=fold,
        angular_phase=angular_phase,
        radial_freq=radial_freq,
        radial_phase=radial_phase,
        decay=decay,
    )


def _check_defects(defects: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    coords = [(int(r), int(c)) for r, c in defects]
    if not 1 <= len(coords) <= MAX_DEFECTS:
        raise ValueError(f"defect count must lie in [1, {MAX_DEFECTS}], got {len(coords)}")
    if len(set(coords)) != len(coords):
        raise ValueError("defect coordinates must be distinct")
    for r, c in coords:
        if not (0 <= r < IMAGE_SIZE and 0 <= c < IMAGE_SIZE):
            raise ValueError(f"defect ({r}, {c}) outside the {IMAGE_SIZE}x{IMAGE_SIZE} image")
    return coords


def synthesize_observation(
    params: KernelParams, defects: Sequence[tuple[int, int]]
) -> tuple[np.ndarray, np.ndarray]:
    """Observation and activation map for a set of distinct defect pixels.

    The observation is the superposition of one kernel copy per defect,
    summed in sorted coordinate order (exact regardless of order thanks to
    the grid snap in kernel_field).
    """
    coords = sorted(_check_defects(defects))
    patch = kernel_patch(params)
    observation = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=np.float64)
    activation = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=np.float64)
    for row, col in coords:
        observation += _field_window(patch, row, col)
        activation[row, col] = 1.0
    return observation, activation


def sample_defects(rng: np.random.Generator) -> list[tuple[int, int]]:
    """Random defect set: count uniform on [1, MAX_DEFECTS], distinct pixels."""
    count = int(rng.integers(1, MAX_DEFECTS + 1))
    cells = np.sort(rng.choice(IMAGE_SIZE * IMAGE_SIZE, size=count, replace=False))
    return [(int(c) // IMAGE_SIZE, int(c) % IMAGE_SIZE) for c in cells]
