"""Metrics and the evaluation harness.

All three regression metrics are pixel-pooled by default: every pixel of
every sample weighs equally.  Summaries are aggregated from per-sample
values so a written per-sample CSV re-aggregates to the summary exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import KERNEL_TEST, KERNEL_TRAIN, Dataset
from .deconv import ForwardOperator, TikhonovConfig, solve_tikhonov_cg
from .diffnet import read_checkpoint
from .models import LATENT_SHAPE, ModelBundle, bundle_from_checkpoint, encode_kernel, encode_observation
from .training import infer_batch

__all__ = [
    "METHOD_TAGS",
    "MetricsRecord",
    "compute_metrics",
    "evaluate_model",
    "export_latents",
    "format_summary_table",
    "load_bundle",
    "per_sample_metrics",
]

METHOD_TAGS = ("two_step", "one_step", "deconv")
SAMPLE_CSV_COLUMNS = ("kernel_id", "sample_id", "mae", "mse", "rmse")
DECONV_OBSERVATIONS_PER_SOLVE = 10


@dataclass(frozen=True)
class MetricsRecord:
    mae: float
    mse: float
    rmse: float
    count: int
    split: str | None = None
    method: str | None = None


def load_bundle(source: ModelBundle | str | Path) -> ModelBundle:
    """Accept an in-memory bundle or a checkpoint path."""
    if isinstance(source, ModelBundle):
        return source
    return bundle_from_checkpoint(read_checkpoint(source))


def _paired_stacks(predictions, targets) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(targets, dtype=np.float64)
    if preds.ndim == 2:
        preds, truth = preds[None], truth[None]
    if preds.shape != truth.shape:
        raise ValueError(f"prediction shape {preds.shape} != target shape {truth.shape}")
    if preds.ndim != 3 or preds.shape[0] == 0:
        raise ValueError(f"expected a non-empty stack of images, got shape {preds.shape}")
    return preds, truth


def per_sample_metrics(predictions, targets) -> np.ndarray:
    """Per-image (mae, mse, rmse) rows, in input order."""
    preds, truth = _paired_stacks(predictions, targets)
    diff = preds - truth
    mae = np.mean(np.abs(diff), axis=(1, 2))
    mse = np.mean(diff * diff, axis=(1, 2))
    return np.column_stack([mae, mse, np.sqrt(mse)])


def compute_metrics(
    predictions,
    targets,
    *,
    per_image: bool = False,
    split: str | None = None,
    method: str | None = None,
) -> MetricsRecord:
    """Pool MAE/MSE/RMSE over all pixels of all pairs.

    With ``per_image=True`` the pooling averages per-image means instead;
    the two agree when all images have the same size (as here) up to
    summation order.
    """
    preds, truth = _paired_stacks(predictions, targets)
    if per_image:
        rows = per_sample_metrics(preds, truth)
        mae = float(np.mean(rows[:, 0]))
        mse = float(np.mean(rows[:, 1]))
    else:
        diff = preds - truth
        mae = float(np.mean(np.abs(diff)))
        mse = float(np.mean(diff * diff))
    return MetricsRecord(
        mae=mae,
        mse=mse,
        rmse=float(np.sqrt(mse)),
        count=preds.shape[0],
        split=split,
        method=method,
    )


def _deconv_predictions(dataset: Dataset, split_tag: str, config: TikhonovConfig) -> np.ndarray:
    """Solve once per kernel from its first observations; reuse per sample."""
    split = dataset.splits[split_tag]
    kernel_ids = split.kernel_ids
    maps = split.maps.astype(np.float64)
    observations = split.observations.astype(np.float64)
    preds = np.empty((len(split), *dataset.kernel_images.shape[1:]))
    for kid in np.unique(kernel_ids):
        rows = np.flatnonzero(kernel_ids == kid)
        solve_rows = rows[:DECONV_OBSERVATIONS_PER_SOLVE]
        op = ForwardOperator(maps[solve_rows])
        result = solve_tikhonov_cg(op, observations[solve_rows], config)
        preds[rows] = result.kernel
    return preds


def evaluate_model(
    method: str,
    model: ModelBundle | str | Path | None,
    dataset: Dataset,
    split_tag: str,
    *,
    csv_path: str | Path | None = None,
    tikhonov: TikhonovConfig | None = None,
) -> MetricsRecord:
    """Run one method over every sample of a split and aggregate metrics.

    ``model`` is a bundle or checkpoint path for the learned methods and
    ignored for ``deconv``.  When ``csv_path`` is given, per-sample rows
    (kernel_id, sample_id, mae, mse, rmse) are written alongside.
    """
    if method not in METHOD_TAGS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHOD_TAGS}")
    if split_tag not in dataset.splits:
        raise ValueError(f"unknown split {split_tag!r}, expected one of {tuple(dataset.splits)}")
    split = dataset.splits[split_tag]
    if method == "deconv":
        preds = _deconv_predictions(dataset, split_tag, tikhonov or TikhonovConfig())
    else:
        bundle = load_bundle(model)
        preds = infer_batch(bundle, split.observations, split.maps)
    targets = dataset.kernel_images[split.kernel_ids].astype(np.float64)
    rows = per_sample_metrics(preds, targets)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(SAMPLE_CSV_COLUMNS)
            for meta, (mae, mse, rmse) in zip(split.metas, rows):
                writer.writerow(
                    [meta.kernel_id, meta.sample_index, repr(float(mae)), repr(float(mse)), repr(float(rmse))]
                )
    mse = float(np.mean(rows[:, 1]))
    return MetricsRecord(
        mae=float(np.mean(rows[:, 0])),
        mse=mse,
        rmse=float(np.sqrt(mse)),
        count=len(split),
        split=split_tag,
        method=method,
    )


def export_latents(
    model: ModelBundle | str | Path,
    dataset: Dataset,
    split_tag: str,
    out_path: str | Path,
    *,
    component: str = "encoder_k",
) -> int:
    """Write flattened mean latents as CSV; returns the row count.

    ``encoder_k`` encodes kernel images (one row per kernel of the kernel
    split ``train``/``test``); ``encoder_y`` encodes observations (one row
    per sample of an observation split).
    """
    bundle = load_bundle(model)
    width = LATENT_SHAPE[0] * LATENT_SHAPE[1] * LATENT_SHAPE[2]
    header = ["kernel_id", "fold_count"] + [f"z{i}" for i in range(width)]
    rows: list[list] = []
    if component == "encoder_k":
        if split_tag not in (KERNEL_TRAIN, KERNEL_TEST):
            raise ValueError(f"kernel split must be train or test, got {split_tag!r}")
        encoder = bundle["encoder_k"]
        for kid in dataset.kernel_ids_for(split_tag):
            code = encode_kernel(encoder, dataset.kernel_images[kid].astype(np.float64))
            rows.append([kid, int(dataset.fold_counts[kid]), *code.mean.ravel()])
    elif component == "encoder_y":
        if split_tag not in dataset.splits:
            raise ValueError(f"unknown split {split_tag!r}")
        encoder = bundle["encoder_y"]
        split = dataset.splits[split_tag]
        for idx, meta in enumerate(split.metas):
            code = encode_observation(
                encoder,
                split.observations[idx].astype(np.float64),
                split.maps[idx].astype(np.float64),
            )
            rows.append([meta.kernel_id, int(dataset.fold_counts[meta.kernel_id]), *code.mean.ravel()])
    else:
        raise ValueError(f"component must be encoder_k or encoder_y, got {component!r}")
    with open(out_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row[:2] + [repr(float(v)) for v in row[2:]])
    return len(rows)


def format_summary_table(records: list[MetricsRecord]) -> str:
    """Aligned plain-text table: one row per (method, split) record."""
    header = ("method", "split", "samples", "MAE", "MSE", "RMSE")
    body = [
        (
            record.method or "-",
            record.split or "-",
            str(record.count),
            f"{record.mae:.6f}",
            f"{record.mse:.6f}",
            f"{record.rmse:.6f}",
        )
        for record in records
    ]
    widths = [max(len(header[c]), *(len(row[c]) for row in body)) if body else len(header[c]) for c in range(6)]
    lines = [
        "  ".join(h.ljust(widths[c]) for c, h in enumerate(header)).rstrip(),
        "  ".join("-" * widths[c] for c in range(6)),
    ]
    for row in body:
        lines.append("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"
