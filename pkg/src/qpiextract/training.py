"""Training loops: kernel autoencoder, observation alignment, one-step baseline.

All three modes share the same bookkeeping: seeded batch permutations, Adam,
a held-out validation slice, per-epoch metric rows, and a best-epoch weight
snapshot that becomes the saved checkpoint.  Randomness is drawn from
counter-derived streams keyed by (seed, purpose, epoch, step), so reruns are
bit-identical and no global state is consumed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import KERNEL_TRAIN, Dataset, SplitData
from .diffnet import Adam, Reparameterize, Sequential, SplitLatent, read_checkpoint
from .losses import batch_align_grad, batch_kl_grad, batch_mse_grad, batch_sym_grad
from .models import (
    ModelBundle,
    adapt_encoder_to_observations,
    build_decoder,
    build_encoder,
    bundle_from_checkpoint,
    decode_kernel,
    encode_kernel,
    encode_observation,
    serialize_weights,
    split_latent_channels,
)
from .rng import derive_rng

MAX_EPOCHS = {"step1": 350, "step2": 40, "onestep": 40}
METRICS_COLUMNS = ("epoch", "split", "loss", "mse", "sym")
ENCODER_Y_INITS = ("from_step1", "random")


@dataclass(frozen=True)
class TrainRunConfig:
    """Options shared by every training mode; `step` picks the mode."""

    step: str
    epochs: int
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0
    alpha: float = 0.75
    kl_weight: float = 0.0
    fold_for_a0: int = 4
    val_fraction: float = 0.1
    patience: int = 0  # 0 disables early stopping
    encoder_y_init: str = "from_step1"

    def __post_init__(self) -> None:
        if self.step not in MAX_EPOCHS:
            raise ValueError(f"step must be one of {sorted(MAX_EPOCHS)}, got {self.step!r}")
        cap = MAX_EPOCHS[self.step]
        if not 1 <= self.epochs <= cap:
            raise ValueError(f"epochs for {self.step} must be in 1..{cap}, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.alpha < 0.0 or self.kl_weight < 0.0:
            raise ValueError("alpha and kl_weight must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.patience < 0:
            raise ValueError(f"patience must be >= 0, got {self.patience}")
        if self.encoder_y_init not in ENCODER_Y_INITS:
            raise ValueError(f"encoder_y_init must be one of {ENCODER_Y_INITS}")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    split: str  # "train" or "val"
    loss: float
    mse: float
    sym: float


@dataclass
class TrainResult:
    bundle: ModelBundle
    best_epoch: int
    best_value: float
    history: list[EpochMetrics]
    stopped_early: bool = False
    checkpoint_metadata: dict = field(default_factory=dict)


def write_metrics(path: str | Path, history: list[EpochMetrics]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(METRICS_COLUMNS)
        for row in history:
            writer.writerow([row.epoch, row.split, repr(row.loss), repr(row.mse), repr(row.sym)])


def _split_validation(count: int, seed: int, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    if count < 2:
        raise ValueError(f"need at least 2 items to hold out validation, got {count}")
    permutation = derive_rng(seed, "val-split").permutation(count)
    n_val = max(1, round(fraction * count))
    return np.sort(permutation[n_val:]), np.sort(permutation[:n_val])


def _batches(indices: np.ndarray, batch_size: int, rng: np.random.Generator):
    order = indices[rng.permutation(len(indices))]
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def _merged_params(nets: dict[str, Sequential]) -> dict[str, np.ndarray]:
    return {
        f"{component}.{name}": value
        for component, seq in nets.items()
        for name, value in seq.parameters().items()
    }


def _merged_grads(nets: dict[str, Sequential]) -> dict[str, np.ndarray]:
    return {
        f"{component}.{name}": value
        for component, seq in nets.items()
        for name, value in seq.gradients().items()
    }


def _ensure_finite(label: str, epoch: int, step: int, **terms: float) -> None:
    if all(np.isfinite(value) for value in terms.values()):
        return
    detail = ", ".join(f"{name}={value!r}" for name, value in terms.items())
    raise RuntimeError(f"non-finite {label} loss at epoch {epoch}, batch {step}: {detail}")


class _BestTracker:
    """Keeps the lowest-validation-metric weights and optimizer state seen."""

    def __init__(self, params: dict[str, np.ndarray], optimizer: Adam):
        self.params = params
        self.optimizer = optimizer
        self.epoch = 0
        self.value = np.inf
        self.snapshot: dict[str, np.ndarray] = {}
        self.moments: dict[str, np.ndarray] = {}
        self.step_count = 0

    def offer(self, epoch: int, value: float) -> bool:
        if value >= self.value:
            return False
        self.epoch = epoch
        self.value = value
        self.snapshot = {name: arr.copy() for name, arr in self.params.items()}
        self.moments = {name: arr.copy() for name, arr in self.optimizer.state_blocks().items()}
        self.step_count = self.optimizer.step_count
        return True

    def restore(self) -> None:
        for name, arr in self.params.items():
            arr[...] = self.snapshot[name]


def _finalize(
    nets: dict[str, Sequential],
    frozen: dict[str, bool],
    tracker: _BestTracker,
    history: list[EpochMetrics],
    config: TrainRunConfig,
    selection: str,
    stopped_early: bool,
    checkpoint_path: str | Path | None,
    metrics_path: str | Path | None,
) -> TrainResult:
    tracker.restore()
    bundle = ModelBundle(dict(nets), frozen)
    metadata = {
        "step": config.step,
        "seed": config.seed,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "alpha": config.alpha,
        "kl_weight": config.kl_weight,
        "fold_for_a0": config.fold_for_a0,
        "val_fraction": config.val_fraction,
        "patience": config.patience,
        "encoder_y_init": config.encoder_y_init,
        "selection": selection,
        "best_epoch": tracker.epoch,
        "best_value": tracker.value,
        "optimizer_steps": tracker.step_count,
        "stopped_early": stopped_early,
    }
    if checkpoint_path is not None:
        raw = serialize_weights(bundle, extra_metadata=metadata, extra_blocks=tracker.moments)
        Path(checkpoint_path).write_bytes(raw)
    if metrics_path is not None:
        write_metrics(metrics_path, history)
    return TrainResult(
        bundle=bundle,
        best_epoch=tracker.epoch,
        best_value=tracker.value,
        history=history,
        stopped_early=stopped_early,
        checkpoint_metadata=metadata,
    )


def _load_step1_bundle(source: ModelBundle | str | Path) -> ModelBundle:
    if isinstance(source, ModelBundle):
        bundle = source
    else:
        bundle = bundle_from_checkpoint(read_checkpoint(source))
    for component in ("encoder_k", "decoder_k"):
        if component not in bundle.networks:
            raise ValueError(f"step-1 checkpoint is missing component {component!r}")
    return bundle


def _vae_epoch_pass(
    encoder: Sequential,
    decoder: Sequential,
    inputs: np.ndarray,
    targets: np.ndarray,
    folds: np.ndarray,
    config: TrainRunConfig,
    *,
    optimizer: Adam | None,
    nets: dict[str, Sequential] | None,
    epoch: int,
) -> tuple[float, float, float]:
    """One pass over `inputs`; trains when an optimizer is given, else the
    deterministic mean path is evaluated without touching any weights."""
    split = SplitLatent()
    reparam = Reparameterize()
    training = optimizer is not None
    if training:
        rng = derive_rng(config.seed, "batch-order", epoch)
        groups = _batches(np.arange(len(inputs)), config.batch_size, rng)
    else:
        groups = (
            np.arange(len(inputs))[s : s + config.batch_size]
            for s in range(0, len(inputs), config.batch_size)
        )
    loss_sum = mse_sum = sym_sum = 0.0
    batches = 0
    for step_idx, batch in enumerate(groups):
        x = inputs[batch]
        t = targets[batch]
        f = folds[batch]
        if training:
            for seq in nets.values():
                seq.zero_grads()
        head = encoder.forward(x)
        mean, logvar = split.forward(head)
        noise = (
            derive_rng(config.seed, "noise", epoch, step_idx).standard_normal(mean.shape)
            if training
            else None
        )
        z = reparam.forward(mean, logvar, noise)
        recon = decoder.forward(z)[:, 0]
        mse_v, mse_g = batch_mse_grad(recon, t)
        sym_v, sym_g = batch_sym_grad(recon, t, f, fold_for_a0=config.fold_for_a0)
        per_sample = mse_v + config.alpha * sym_v
        if config.kl_weight > 0.0:
            kl_v, kl_gm, kl_glv = batch_kl_grad(mean, logvar)
            per_sample = per_sample + config.kl_weight * kl_v
        loss = float(per_sample.mean())
        _ensure_finite(
            config.step, epoch, step_idx, loss=loss, mse=float(mse_v.mean()), sym=float(sym_v.mean())
        )
        if training:
            scale = 1.0 / len(batch)
            grad_recon = (mse_g + config.alpha * sym_g) * scale
            grad_z = decoder.backward(grad_recon[:, None])
            grad_mean, grad_logvar = reparam.backward(grad_z)
            if config.kl_weight > 0.0:
                grad_mean = grad_mean + (config.kl_weight * scale) * kl_gm
                grad_logvar = grad_logvar + (config.kl_weight * scale) * kl_glv
            encoder.backward(split.backward(grad_mean, grad_logvar))
            optimizer.step(_merged_grads(nets))
        loss_sum += loss
        mse_sum += float(mse_v.mean())
        sym_sum += float(sym_v.mean())
        batches += 1
    return loss_sum / batches, mse_sum / batches, sym_sum / batches


def train_step1(
    dataset: Dataset,
    config: TrainRunConfig,
    *,
    checkpoint_path: str | Path | None = None,
    metrics_path: str | Path | None = None,
) -> TrainResult:
    """Fit the kernel autoencoder on train-split kernel images."""
    if config.step != "step1":
        raise ValueError(f"config.step must be 'step1', got {config.step!r}")
    kernel_ids = dataset.kernel_ids_for(KERNEL_TRAIN)
    images = dataset.kernel_images[kernel_ids].astype(np.float64)
    folds = dataset.fold_counts[kernel_ids]
    fit_idx, val_idx = _split_validation(len(kernel_ids), config.seed, config.val_fraction)

    encoder = build_encoder(derive_rng(config.seed, "step1-encoder"))
    decoder = build_decoder(derive_rng(config.seed, "step1-decoder"))
    nets = {"encoder_k": encoder, "decoder_k": decoder}
    params = _merged_params(nets)
    optimizer = Adam(params, learning_rate=config.learning_rate)
    tracker = _BestTracker(params, optimizer)

    history: list[EpochMetrics] = []
    stopped_early = False
    # Re-slicing per call keeps the training pass reading only fit rows.
    fit_images, fit_folds = images[fit_idx][:, None], folds[fit_idx]
    val_images, val_folds = images[val_idx][:, None], folds[val_idx]
    for epoch in range(1, config.epochs + 1):
        train_row = _vae_epoch_pass(
            encoder, decoder, fit_images, fit_images[:, 0], fit_folds, config,
            optimizer=optimizer, nets=nets, epoch=epoch,
        )
        history.append(EpochMetrics(epoch, "train", *train_row))
        val_loss, val_mse, val_sym = _vae_epoch_pass(
            encoder, decoder, val_images, val_images[:, 0], val_folds, config,
            optimizer=None, nets=None, epoch=epoch,
        )
        history.append(EpochMetrics(epoch, "val", val_loss, val_mse, val_sym))
        improved = tracker.offer(epoch, val_mse)
        if config.patience > 0 and not improved and epoch - tracker.epoch >= config.patience:
            stopped_early = True
            break
    return _finalize(
        nets, {}, tracker, history, config, "val_mse", stopped_early, checkpoint_path, metrics_path
    )


def _stack_observation_batch(split: SplitData, batch: np.ndarray) -> np.ndarray:
    obs = split.observations[batch].astype(np.float64)
    maps = split.maps[batch].astype(np.float64)
    return np.stack([obs, maps], axis=1)


def train_step2(
    dataset: Dataset,
    step1_checkpoint: ModelBundle | str | Path,
    config: TrainRunConfig,
    *,
    checkpoint_path: str | Path | None = None,
    metrics_path: str | Path | None = None,
) -> TrainResult:
    """Align observation latents to frozen kernel latents on train samples."""
    if config.step != "step2":
        raise ValueError(f"config.step must be 'step2', got {config.step!r}")
    step1 = _load_step1_bundle(step1_checkpoint)
    encoder_k, decoder_k = step1["encoder_k"], step1["decoder_k"]
    if config.encoder_y_init == "from_step1":
        encoder_y = adapt_encoder_to_observations(encoder_k)
    else:
        encoder_y = build_encoder(derive_rng(config.seed, "step2-encoder"), in_channels=2)

    train_split = dataset.splits["train"]
    sample_kernels = train_split.kernel_ids
    kernel_targets = dataset.kernel_images.astype(np.float64)
    sample_folds = dataset.fold_counts[sample_kernels]
    # Latents of the frozen kernel encoder, one per kernel, reused all run.
    anchor = np.stack(
        [encode_kernel(encoder_k, kernel_targets[k]).mean for k in range(dataset.kernel_count)]
    )
    fit_idx, val_idx = _split_validation(len(train_split), config.seed, config.val_fraction)

    nets = {"encoder_y": encoder_y}
    params = _merged_params(nets)
    optimizer = Adam(params, learning_rate=config.learning_rate)
    tracker = _BestTracker(params, optimizer)
    split_layer = SplitLatent()

    def epoch_pass(indices: np.ndarray, epoch: int, training: bool) -> tuple[float, float, float]:
        if training:
            rng = derive_rng(config.seed, "batch-order", epoch)
            groups = _batches(indices, config.batch_size, rng)
        else:
            groups = (indices[s : s + config.batch_size] for s in range(0, len(indices), config.batch_size))
        loss_sum = mse_sum = sym_sum = 0.0
        batches = 0
        for step_idx, batch in enumerate(groups):
            x = _stack_observation_batch(train_split, batch)
            kids = sample_kernels[batch]
            if training:
                encoder_y.zero_grads()
            mean, logvar = split_layer.forward(encoder_y.forward(x))
            align_v, align_g = batch_align_grad(mean, anchor[kids])
            loss = float(align_v.mean())
            _ensure_finite("step2", epoch, step_idx, align=loss)
            if training:
                grad_mean = align_g / len(batch)
                encoder_y.backward(split_layer.backward(grad_mean, np.zeros_like(logvar)))
                optimizer.step(_merged_grads(nets))
            # Reconstruction quality through the frozen decoder, for the log.
            recon = decoder_k.forward(mean)[:, 0]
            mse_v, _ = batch_mse_grad(recon, kernel_targets[kids])
            sym_v, _ = batch_sym_grad(recon, kernel_targets[kids], sample_folds[batch],
                                      fold_for_a0=config.fold_for_a0)
            loss_sum += loss
            mse_sum += float(mse_v.mean())
            sym_sum += float(sym_v.mean())
            batches += 1
        return loss_sum / batches, mse_sum / batches, sym_sum / batches

    history: list[EpochMetrics] = []
    stopped_early = False
    for epoch in range(1, config.epochs + 1):
        history.append(EpochMetrics(epoch, "train", *epoch_pass(fit_idx, epoch, True)))
        val_loss, val_mse, val_sym = epoch_pass(val_idx, epoch, False)
        history.append(EpochMetrics(epoch, "val", val_loss, val_mse, val_sym))
        improved = tracker.offer(epoch, val_loss)
        if config.patience > 0 and not improved and epoch - tracker.epoch >= config.patience:
            stopped_early = True
            break
    nets_out = {"encoder_k": encoder_k, "decoder_k": decoder_k, "encoder_y": encoder_y}
    frozen = {"encoder_k": True, "decoder_k": True}
    return _finalize(
        nets_out, frozen, tracker, history, config, "val_align", stopped_early,
        checkpoint_path, metrics_path,
    )


def train_onestep(
    dataset: Dataset,
    config: TrainRunConfig,
    *,
    checkpoint_path: str | Path | None = None,
    metrics_path: str | Path | None = None,
) -> TrainResult:
    """Train a single (Y, M) -> kernel VAE as the baseline."""
    if config.step != "onestep":
        raise ValueError(f"config.step must be 'onestep', got {config.step!r}")
    encoder_y = build_encoder(derive_rng(config.seed, "onestep-encoder"), in_channels=2)
    decoder = build_decoder(derive_rng(config.seed, "onestep-decoder"))
    nets = {"encoder_y": encoder_y, "decoder_k": decoder}
    params = _merged_params(nets)
    optimizer = Adam(params, learning_rate=config.learning_rate)
    tracker = _BestTracker(params, optimizer)

    train_split = dataset.splits["train"]
    sample_kernels = train_split.kernel_ids
    kernel_targets = dataset.kernel_images.astype(np.float64)
    sample_folds = dataset.fold_counts[sample_kernels]
    fit_idx, val_idx = _split_validation(len(train_split), config.seed, config.val_fraction)

    def data_for(indices: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            _stack_observation_batch(train_split, indices),
            kernel_targets[sample_kernels[indices]],
            sample_folds[indices],
        )

    fit_inputs, fit_targets, fit_folds = data_for(fit_idx)
    val_inputs, val_targets, val_folds = data_for(val_idx)
    history: list[EpochMetrics] = []
    stopped_early = False
    for epoch in range(1, config.epochs + 1):
        train_row = _vae_epoch_pass(
            encoder_y, decoder, fit_inputs, fit_targets, fit_folds, config,
            optimizer=optimizer, nets=nets, epoch=epoch,
        )
        history.append(EpochMetrics(epoch, "train", *train_row))
        val_loss, val_mse, val_sym = _vae_epoch_pass(
            encoder_y, decoder, val_inputs, val_targets, val_folds, config,
            optimizer=None, nets=None, epoch=epoch,
        )
        history.append(EpochMetrics(epoch, "val", val_loss, val_mse, val_sym))
        improved = tracker.offer(epoch, val_mse)
        if config.patience > 0 and not improved and epoch - tracker.epoch >= config.patience:
            stopped_early = True
            break
    return _finalize(
        nets, {}, tracker, history, config, "val_mse", stopped_early, checkpoint_path, metrics_path
    )


def infer_kernel(bundle: ModelBundle, observation: np.ndarray, activation_map: np.ndarray) -> np.ndarray:
    """Estimate the kernel for one observation: encode (Y, M), decode latent."""
    for component in ("encoder_y", "decoder_k"):
        if component not in bundle.networks:
            raise ValueError(f"bundle is missing component {component!r} required for inference")
    code = encode_observation(bundle["encoder_y"], observation, activation_map)
    return decode_kernel(bundle["decoder_k"], code)


def infer_batch(
    bundle: ModelBundle,
    observations: np.ndarray,
    maps: np.ndarray,
    *,
    chunk_size: int = 16,
) -> np.ndarray:
    """Vectorized mean-path inference over stacks of observations."""
    for component in ("encoder_y", "decoder_k"):
        if component not in bundle.networks:
            raise ValueError(f"bundle is missing component {component!r} required for inference")
    encoder_y, decoder_k = bundle["encoder_y"], bundle["decoder_k"]
    outputs = np.empty((len(observations),) + observations.shape[1:], dtype=np.float64)
    for start in range(0, len(observations), chunk_size):
        stop = start + chunk_size
        x = np.stack(
            [
                observations[start:stop].astype(np.float64),
                maps[start:stop].astype(np.float64),
            ],
            axis=1,
        )
        mean, _ = split_latent_channels(encoder_y.forward(x))
        outputs[start:stop] = decoder_k.forward(mean)[:, 0]
    return outputs
