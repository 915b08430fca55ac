"""Estimator-style wrappers around the training and solver pipelines.

These follow scikit-learn conventions: constructor arguments are stored
verbatim as hyperparameters (``get_params``/``set_params``/``clone`` all
work), fitting populates trailing-underscore attributes, and prediction
refuses to run unfitted.  The learned extractors consume a ``Dataset``
and predict from stacked (observation, activation-map) inputs.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .dataset import Dataset
from .deconv import ForwardOperator, TikhonovConfig, apply_forward, solve_tikhonov_cg
from .models import decode_kernel, encode_kernel
from .simulate import IMAGE_SIZE
from .training import TrainRunConfig, infer_batch, train_onestep, train_step1, train_step2

__all__ = [
    "KernelAutoencoder",
    "OneStepKernelExtractor",
    "TikhonovDeconvolver",
    "TwoStepKernelExtractor",
    "stack_inputs",
]


def stack_inputs(observations: np.ndarray, activation_maps: np.ndarray) -> np.ndarray:
    """Stack per-sample observations and maps into the (N, 2, H, W) predict input."""
    obs = np.asarray(observations, dtype=np.float64)
    maps = np.asarray(activation_maps, dtype=np.float64)
    if obs.ndim == 2:
        obs, maps = obs[None], maps[None]
    if obs.shape != maps.shape or obs.ndim != 3:
        raise ValueError(
            f"observations {np.shape(observations)} and maps {np.shape(activation_maps)} "
            "must be matching (N, H, W) stacks"
        )
    return np.stack([obs, maps], axis=1)


def _check_predict_input(X: np.ndarray) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[1] != 2 or arr.shape[2:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(
            f"expected (N, 2, {IMAGE_SIZE}, {IMAGE_SIZE}) stacked observation/map input, "
            f"got shape {arr.shape}; build it with stack_inputs()"
        )
    return arr


def _check_dataset(dataset) -> Dataset:
    if not isinstance(dataset, Dataset):
        raise TypeError(f"expected a Dataset, got {type(dataset).__name__}")
    return dataset


class KernelAutoencoder(BaseEstimator):
    """Latent codec for kernel images (training stage 1 as an estimator)."""

    def __init__(
        self,
        epochs: int = 120,
        batch_size: int = 8,
        learning_rate: float = 1e-4,
        seed: int = 0,
        alpha: float = 0.75,
        kl_weight: float = 0.0,
        fold_for_a0: int = 4,
        val_fraction: float = 0.1,
        patience: int = 0,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.alpha = alpha
        self.kl_weight = kl_weight
        self.fold_for_a0 = fold_for_a0
        self.val_fraction = val_fraction
        self.patience = patience

    def _run_config(self) -> TrainRunConfig:
        return TrainRunConfig(
            step="step1",
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            alpha=self.alpha,
            kl_weight=self.kl_weight,
            fold_for_a0=self.fold_for_a0,
            val_fraction=self.val_fraction,
            patience=self.patience,
        )

    def fit(self, dataset, y=None):
        result = train_step1(_check_dataset(dataset), self._run_config())
        self.result_ = result
        self.bundle_ = result.bundle
        return self

    def transform(self, kernel_images: np.ndarray) -> np.ndarray:
        """Kernel images (N, H, W) -> flattened mean latents (N, 256)."""
        check_is_fitted(self, "bundle_")
        images = np.asarray(kernel_images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        return np.stack(
            [encode_kernel(self.bundle_["encoder_k"], img).mean.ravel() for img in images]
        )

    def inverse_transform(self, latents: np.ndarray) -> np.ndarray:
        """Flattened latents (N, 256) -> decoded kernel images (N, H, W)."""
        check_is_fitted(self, "bundle_")
        codes = np.asarray(latents, dtype=np.float64)
        if codes.ndim == 1:
            codes = codes[None]
        return np.stack(
            [decode_kernel(self.bundle_["decoder_k"], code.reshape(4, 8, 8)) for code in codes]
        )


class _ExtractorBase(BaseEstimator):
    def predict(self, X: np.ndarray) -> np.ndarray:
        """Stacked (N, 2, H, W) observation/map input -> kernel estimates (N, H, W)."""
        check_is_fitted(self, "bundle_")
        arr = _check_predict_input(X)
        return infer_batch(self.bundle_, arr[:, 0], arr[:, 1])


class TwoStepKernelExtractor(_ExtractorBase):
    """Kernel codec first, observation-encoder alignment second."""

    def __init__(
        self,
        step1_epochs: int = 120,
        step2_epochs: int = 40,
        batch_size: int = 8,
        learning_rate: float = 1e-4,
        seed: int = 0,
        alpha: float = 0.75,
        kl_weight: float = 0.0,
        fold_for_a0: int = 4,
        val_fraction: float = 0.1,
        patience: int = 0,
        encoder_y_init: str = "from_step1",
        step1_bundle: object = None,
    ):
        self.step1_epochs = step1_epochs
        self.step2_epochs = step2_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.alpha = alpha
        self.kl_weight = kl_weight
        self.fold_for_a0 = fold_for_a0
        self.val_fraction = val_fraction
        self.patience = patience
        self.encoder_y_init = encoder_y_init
        self.step1_bundle = step1_bundle

    def fit(self, dataset, y=None):
        dataset = _check_dataset(dataset)
        common = dict(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            alpha=self.alpha,
            kl_weight=self.kl_weight,
            fold_for_a0=self.fold_for_a0,
            val_fraction=self.val_fraction,
            patience=self.patience,
        )
        if self.step1_bundle is not None:
            step1_bundle = self.step1_bundle
            self.step1_result_ = None
        else:
            step1 = train_step1(
                dataset, TrainRunConfig(step="step1", epochs=self.step1_epochs, **common)
            )
            step1_bundle = step1.bundle
            self.step1_result_ = step1
        step2 = train_step2(
            dataset,
            step1_bundle,
            TrainRunConfig(
                step="step2",
                epochs=self.step2_epochs,
                encoder_y_init=self.encoder_y_init,
                **common,
            ),
        )
        self.step2_result_ = step2
        self.bundle_ = step2.bundle
        return self


class OneStepKernelExtractor(_ExtractorBase):
    """Direct observation-to-kernel baseline trained end to end."""

    def __init__(
        self,
        epochs: int = 40,
        batch_size: int = 8,
        learning_rate: float = 1e-4,
        seed: int = 0,
        alpha: float = 0.75,
        kl_weight: float = 0.0,
        fold_for_a0: int = 4,
        val_fraction: float = 0.1,
        patience: int = 0,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.alpha = alpha
        self.kl_weight = kl_weight
        self.fold_for_a0 = fold_for_a0
        self.val_fraction = val_fraction
        self.patience = patience

    def fit(self, dataset, y=None):
        result = train_onestep(
            _check_dataset(dataset),
            TrainRunConfig(
                step="onestep",
                epochs=self.epochs,
                batch_size=self.batch_size,
                learning_rate=self.learning_rate,
                seed=self.seed,
                alpha=self.alpha,
                kl_weight=self.kl_weight,
                fold_for_a0=self.fold_for_a0,
                val_fraction=self.val_fraction,
                patience=self.patience,
            ),
        )
        self.result_ = result
        self.bundle_ = result.bundle
        return self


class TikhonovDeconvolver(BaseEstimator):
    """Classical least-squares recovery of one kernel from its observations."""

    def __init__(
        self,
        lam: float = 1e-8,
        max_iterations: int = 2000,
        tolerance: float = 1e-12,
        support: tuple[int, int] = (IMAGE_SIZE, IMAGE_SIZE),
    ):
        self.lam = lam
        self.max_iterations = max_iterations
        self.tolerance = tolerance
        self.support = support

    def fit(self, X, y):
        """X: activation maps (k, H, W); y: matching observations (k, H, W)."""
        op = ForwardOperator(X, support=tuple(self.support))
        result = solve_tikhonov_cg(
            op,
            y,
            TikhonovConfig(
                lam=self.lam, max_iterations=self.max_iterations, tolerance=self.tolerance
            ),
        )
        if not result.converged:
            raise NotFittedError(
                f"solver did not converge within {self.max_iterations} iterations "
                f"(residual {result.residual:.3e}); raise max_iterations or lam"
            )
        self.result_ = result
        self.kernel_ = result.kernel
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Predict observations the fitted kernel would produce for new maps."""
        check_is_fitted(self, "kernel_")
        op = ForwardOperator(X, support=tuple(self.support))
        return apply_forward(op, self.kernel_)
