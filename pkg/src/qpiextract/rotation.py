"""Image rotations about the pixel centre, built as sparse linear operators.

Rotating a 64x64 field about pixel (32, 32) is a fixed linear map, so each
angle is materialised once as a sparse matrix and cached.  Right-angle
multiples use an exact index permutation (no interpolation error); every
other angle resamples bilinearly with zero fill outside the frame.  Keeping
the operator explicit gives the adjoint for free, which the symmetry loss
needs for its gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .simulate import IMAGE_SIZE

# Comparison window for the symmetry loss: the 43x43 square centred on the
# rotation centre (rows/cols 11..53).  Its half-diagonal (21*sqrt(2) ~ 29.7)
# stays inside the valid region for every rotation angle used here.
CROP = slice(11, 54)
CROP_SIZE = CROP.stop - CROP.start

# Rotation angle applied when checking n-fold symmetry.
FOLD_ANGLE_DEGREES = {2: 180.0, 3: 120.0, 4: 90.0, 6: 60.0}

# Fully rotation-symmetric kernels have no preferred angle; any rotation is a
# symmetry, so the grid-exact quarter turn is used by default.
DEFAULT_FOLD_FOR_A0 = 4


@dataclass(frozen=True)
class RotationCropSpec:
    """Angle plus the fixed crop window used by the symmetry loss."""

    angle_degrees: float

    @property
    def angle(self) -> float:
        """Rotation angle in radians."""
        return math.radians(self.angle_degrees)

    @classmethod
    def for_fold(cls, fold_count: int, *, fold_for_a0: int = DEFAULT_FOLD_FOR_A0) -> "RotationCropSpec":
        effective = fold_for_a0 if fold_count == 0 else fold_count
        if effective not in FOLD_ANGLE_DEGREES:
            raise ValueError(f"no rotation angle defined for fold count {fold_count!r}")
        return cls(FOLD_ANGLE_DEGREES[effective])


def _quarter_turn_matrix(quarter: int, size: int) -> sparse.csr_array:
    """Exact permutation (with zero fill) for a multiple of 90 degrees."""
    two_c = 2 * (size // 2)
    idx = np.arange(size)
    i = np.repeat(idx, size)
    j = np.tile(idx, size)
    if quarter == 0:
        si, sj = i, j
    elif quarter == 1:
        si, sj = two_c - j, i
    elif quarter == 2:
        si, sj = two_c - i, two_c - j
    else:
        si, sj = j, two_c - i
    valid = (si >= 0) & (si < size) & (sj >= 0) & (sj < size)
    rows = (i * size + j)[valid]
    cols = (si * size + sj)[valid]
    data = np.ones(rows.size, dtype=np.float64)
    n = size * size
    return sparse.csr_array((data, (rows, cols)), shape=(n, n))


def _bilinear_matrix(angle_degrees: float, size: int) -> sparse.csr_array:
    phi = math.radians(angle_degrees)
    cos_phi, sin_phi = math.cos(phi), math.sin(phi)
    c = size // 2
    offsets = np.arange(size, dtype=np.float64) - c
    dy = offsets[:, None]
    dx = offsets[None, :]
    # Inverse mapping: where does each output pixel sample the input?
    src_x = (c + cos_phi * dx + sin_phi * dy).ravel()
    src_y = (c - sin_phi * dx + cos_phi * dy).ravel()
    i0 = np.floor(src_y).astype(np.int64)
    j0 = np.floor(src_x).astype(np.int64)
    ty = src_y - i0
    tx = src_x - j0
    out_index = np.arange(size * size)
    corners = (
        (i0, j0, (1.0 - ty) * (1.0 - tx)),
        (i0, j0 + 1, (1.0 - ty) * tx),
        (i0 + 1, j0, ty * (1.0 - tx)),
        (i0 + 1, j0 + 1, ty * tx),
    )
    rows, cols, data = [], [], []
    for ii, jj, weight in corners:
        keep = (ii >= 0) & (ii < size) & (jj >= 0) & (jj < size) & (weight != 0.0)
        rows.append(out_index[keep])
        cols.append((ii * size + jj)[keep])
        data.append(weight[keep])
    n = size * size
    coo = sparse.coo_array(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return coo.tocsr()


@lru_cache(maxsize=None)
def rotation_operator(angle_degrees: float, size: int = IMAGE_SIZE) -> sparse.csr_array:
    """Sparse matrix rotating a flattened size*size image about (size//2, size//2)."""
    reduced = angle_degrees % 360.0
    if reduced % 90.0 == 0.0:
        return _quarter_turn_matrix(int(round(reduced / 90.0)) % 4, size)
    return _bilinear_matrix(reduced, size)


def _flatten(images: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[-2:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"expected trailing {IMAGE_SIZE}x{IMAGE_SIZE} dims, got {arr.shape}")
    return arr.reshape(-1, IMAGE_SIZE * IMAGE_SIZE), arr.shape


def rotate_images(images: np.ndarray, spec: RotationCropSpec) -> np.ndarray:
    """Rotate a 64x64 image (or a stack of them) about the pixel centre."""
    flat, shape = _flatten(images)
    return (rotation_operator(spec.angle_degrees) @ flat.T).T.reshape(shape)


def rotate_adjoint(images: np.ndarray, spec: RotationCropSpec) -> np.ndarray:
    """Apply the transpose of the rotation operator (for gradients)."""
    flat, shape = _flatten(images)
    op = rotation_operator(spec.angle_degrees)
    return (op.T @ flat.T).T.reshape(shape)


def crop_center(images: np.ndarray) -> np.ndarray:
    """Extract the 43x43 comparison window from the trailing image dims."""
    return np.asarray(images)[..., CROP, CROP]


def rotate_and_crop(image: np.ndarray, spec: RotationCropSpec) -> np.ndarray:
    """Rotate about the pixel centre, then crop to the comparison window."""
    return crop_center(rotate_images(image, spec))
