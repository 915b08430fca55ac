"""Training objectives: reconstruction, rotational symmetry, latent alignment.

The reconstruction and symmetry losses are root-sum-square errors divided by
the pixel count (not the conventional mean of squares); the composite weight
absorbs the constant factor.  Each loss comes in a scalar form and a batched
value-plus-gradient form used by the training loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rotation import (
    CROP_SIZE,
    DEFAULT_FOLD_FOR_A0,
    FOLD_ANGLE_DEGREES,
    RotationCropSpec,
    crop_center,
    rotate_adjoint,
    rotate_images,
)

LatentCode = tuple[np.ndarray, np.ndarray]
"""(mean, logvar) pair describing a diagonal Gaussian over the latent grid."""

MAX_STEP1_EPOCHS = 350


@dataclass(frozen=True)
class Step1Config:
    """Hyperparameters for the kernel-autoencoder objective and its run."""

    alpha: float = 0.75
    kl_weight: float = 0.0
    epochs: int = MAX_STEP1_EPOCHS
    batch_size: int = 8
    learning_rate: float = 1e-4
    fold_for_a0: int = DEFAULT_FOLD_FOR_A0

    def __post_init__(self) -> None:
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.kl_weight < 0.0:
            raise ValueError(f"kl_weight must be >= 0, got {self.kl_weight}")
        if not 1 <= self.epochs <= MAX_STEP1_EPOCHS:
            raise ValueError(f"epochs must be in 1..{MAX_STEP1_EPOCHS}, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.fold_for_a0 not in FOLD_ANGLE_DEGREES:
            raise ValueError(f"fold_for_a0 must be one of {sorted(FOLD_ANGLE_DEGREES)}")


def _paired(recon: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(recon, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if r.ndim != 2 or r.shape != t.shape:
        raise ValueError(f"expected matching 2-D images, got {r.shape} vs {t.shape}")
    return r, t


def loss_mse(recon: np.ndarray, target: np.ndarray) -> float:
    """Root-sum-square pixel error divided by the pixel count."""
    r, t = _paired(recon, target)
    diff = r - t
    return float(np.sqrt(np.sum(diff * diff)) / diff.size)


def loss_sym(
    recon: np.ndarray,
    target: np.ndarray,
    fold_count: int,
    *,
    fold_for_a0: int = DEFAULT_FOLD_FOR_A0,
) -> float:
    """Mismatch between the rotated reconstruction and the unrotated target.

    Both sides are compared on the central 43x43 window; the rotation angle
    is the fold's symmetry angle.
    """
    r, t = _paired(recon, target)
    spec = RotationCropSpec.for_fold(fold_count, fold_for_a0=fold_for_a0)
    residual = crop_center(rotate_images(r, spec)) - crop_center(t)
    return float(np.sqrt(np.sum(residual * residual)) / residual.size)


def kl_divergence(mean: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(mean, exp(logvar)) || N(0, 1)), summed over all latent entries."""
    mu = np.asarray(mean, dtype=np.float64)
    lv = np.asarray(logvar, dtype=np.float64)
    if mu.shape != lv.shape:
        raise ValueError(f"mean/logvar shapes differ: {mu.shape} vs {lv.shape}")
    return float(0.5 * np.sum(mu * mu + np.exp(lv) - 1.0 - lv))


def loss_step1(
    recon: np.ndarray,
    target: np.ndarray,
    fold_count: int,
    config: Step1Config,
    latent: LatentCode | None = None,
) -> float:
    """Composite objective: reconstruction + alpha*symmetry (+ optional KL)."""
    value = loss_mse(recon, target) + config.alpha * loss_sym(
        recon, target, fold_count, fold_for_a0=config.fold_for_a0
    )
    if config.kl_weight > 0.0:
        if latent is None:
            raise ValueError("kl_weight > 0 requires a latent code")
        value += config.kl_weight * kl_divergence(*latent)
    return value


def loss_align(h_y: np.ndarray, h_a: np.ndarray) -> float:
    """Euclidean distance between observation and kernel latent means."""
    a = np.asarray(h_y, dtype=np.float64)
    b = np.asarray(h_a, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"latent shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sqrt(np.sum(diff * diff)))


# --- batched value-and-gradient forms -------------------------------------
#
# All take a leading batch axis and return per-sample values alongside the
# gradient with respect to the first argument.  Zero residuals yield zero
# gradients (the norm is not differentiable at 0; 0 is the subgradient used).


def _paired_batch(recon: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(recon, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if r.ndim != 3 or r.shape != t.shape:
        raise ValueError(f"expected matching (batch, H, W) stacks, got {r.shape} vs {t.shape}")
    return r, t


def _norm_and_scaled(residual: np.ndarray, area: int) -> tuple[np.ndarray, np.ndarray]:
    flat = residual.reshape(residual.shape[0], -1)
    norms = np.sqrt(np.einsum("bi,bi->b", flat, flat))
    safe = np.where(norms > 0.0, norms, 1.0)
    grads = residual / (safe * area).reshape((-1,) + (1,) * (residual.ndim - 1))
    return norms / area, grads


def batch_mse_grad(recon: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r, t = _paired_batch(recon, target)
    return _norm_and_scaled(r - t, r.shape[1] * r.shape[2])


def batch_sym_grad(
    recon: np.ndarray,
    target: np.ndarray,
    fold_counts: np.ndarray,
    *,
    fold_for_a0: int = DEFAULT_FOLD_FOR_A0,
) -> tuple[np.ndarray, np.ndarray]:
    r, t = _paired_batch(recon, target)
    folds = np.asarray(fold_counts, dtype=np.int64)
    if folds.shape != (r.shape[0],):
        raise ValueError(f"need one fold count per sample, got shape {folds.shape}")
    values = np.empty(r.shape[0])
    grads = np.empty_like(r)
    for fold in np.unique(folds):
        mask = folds == fold
        spec = RotationCropSpec.for_fold(int(fold), fold_for_a0=fold_for_a0)
        residual = crop_center(rotate_images(r[mask], spec)) - crop_center(t[mask])
        values[mask], grad_crop = _norm_and_scaled(residual, CROP_SIZE * CROP_SIZE)
        embedded = np.zeros((int(mask.sum()),) + r.shape[1:])
        crop_center(embedded)[...] = grad_crop
        grads[mask] = rotate_adjoint(embedded, spec)
    return values, grads


def batch_align_grad(h_y: np.ndarray, h_a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(h_y, dtype=np.float64)
    b = np.asarray(h_a, dtype=np.float64)
    if a.ndim < 2 or a.shape != b.shape:
        raise ValueError(f"expected matching batched latents, got {a.shape} vs {b.shape}")
    diff = a - b
    flat = diff.reshape(diff.shape[0], -1)
    norms = np.sqrt(np.einsum("bi,bi->b", flat, flat))
    safe = np.where(norms > 0.0, norms, 1.0)
    grads = diff / safe.reshape((-1,) + (1,) * (diff.ndim - 1))
    return norms, grads


def batch_kl_grad(
    mean: np.ndarray, logvar: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = np.asarray(mean, dtype=np.float64)
    lv = np.asarray(logvar, dtype=np.float64)
    if mu.ndim < 2 or mu.shape != lv.shape:
        raise ValueError(f"expected matching batched latents, got {mu.shape} vs {lv.shape}")
    explv = np.exp(lv)
    axes = tuple(range(1, mu.ndim))
    values = 0.5 * np.sum(mu * mu + explv - 1.0 - lv, axis=axes)
    return values, mu.copy(), 0.5 * (explv - 1.0)
