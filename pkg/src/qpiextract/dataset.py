"""Reproducible multi-scatterer dataset generation, persistence and loading.

A dataset directory holds a plain-text ``manifest.json`` (seeds, counts,
kernel parameters, split tags, defect coordinates) next to one binary blob
per array group: the kernel images, and per split the observations and
activation maps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .parallel import parallel_map
from .rng import derive_rng
from .simulate import (
    FOLD_COUNTS,
    IMAGE_SIZE,
    KernelParams,
    rasterize_kernel,
    sample_defects,
    sample_kernel_params,
    synthesize_observation,
)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
SPLITS = ("train", "id_test", "ood_test")

KERNEL_TRAIN = "train"
KERNEL_TEST = "test"


@dataclass(frozen=True)
class GenerationConfig:
    kernel_count: int = 100
    observations_per_kernel: int = 500
    master_seed: int = 0
    kernel_train_fraction: float = 0.8
    sample_train_fraction: float = 0.8

    def __post_init__(self) -> None:
        if self.kernel_count <= 0 or self.kernel_count % len(FOLD_COUNTS) != 0:
            raise ValueError(
                f"kernel_count must be a positive multiple of {len(FOLD_COUNTS)}, got {self.kernel_count}"
            )
        if self.observations_per_kernel <= 0:
            raise ValueError("observations_per_kernel must be positive")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")
        for name in ("kernel_train_fraction", "sample_train_fraction"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie strictly between 0 and 1, got {value}")


@dataclass(frozen=True)
class SampleMeta:
    kernel_id: int
    sample_index: int
    defects: tuple[tuple[int, int], ...]


@dataclass
class SplitData:
    observations: np.ndarray  # (N, 64, 64) float32
    maps: np.ndarray  # (N, 64, 64) float32
    metas: list[SampleMeta]

    def __len__(self) -> int:
        return len(self.metas)

    @property
    def kernel_ids(self) -> np.ndarray:
        return np.array([m.kernel_id for m in self.metas], dtype=np.int64)


@dataclass
class Dataset:
    config: GenerationConfig
    kernel_params: list[KernelParams]
    kernel_images: np.ndarray  # (K, 64, 64) float32
    kernel_split: list[str]  # KERNEL_TRAIN / KERNEL_TEST per kernel
    splits: dict[str, SplitData] = field(default_factory=dict)

    @property
    def kernel_count(self) -> int:
        return len(self.kernel_params)

    @property
    def fold_counts(self) -> np.ndarray:
        return np.array([p.fold_count for p in self.kernel_params], dtype=np.int64)

    def kernel_ids_for(self, tag: str) -> list[int]:
        return [i for i, s in enumerate(self.kernel_split) if s == tag]


def _empty_split() -> SplitData:
    shape = (0, IMAGE_SIZE, IMAGE_SIZE)
    return SplitData(
        observations=np.zeros(shape, dtype=np.float32),
        maps=np.zeros(shape, dtype=np.float32),
        metas=[],
    )


def generate_dataset(config: GenerationConfig, out_dir: str | Path | None = None) -> Dataset:
    """Generate kernels, samples and splits from the master seed.

    Per-sample randomness is derived from (master_seed, kernel_id,
    sample_index), so regeneration is bit-identical and order-independent.
    When ``out_dir`` is given the dataset is also written to disk.
    """
    seed = config.master_seed
    kernel_params = [
        sample_kernel_params(seed, i, config.kernel_count) for i in range(config.kernel_count)
    ]
    kernel_images = np.stack([rasterize_kernel(p) for p in kernel_params]).astype(np.float32)

    split_rng = derive_rng(seed, "kernel-split")
    permutation = split_rng.permutation(config.kernel_count)
    n_test = round(config.kernel_count * (1.0 - config.kernel_train_fraction))
    test_ids = set(int(i) for i in permutation[:n_test])
    kernel_split = [KERNEL_TEST if i in test_ids else KERNEL_TRAIN for i in range(config.kernel_count)]

    n_train_obs = round(config.observations_per_kernel * config.sample_train_fraction)
    metas: dict[str, list[SampleMeta]] = {name: [] for name in SPLITS}
    for kernel_id in range(config.kernel_count):
        for sample_index in range(config.observations_per_kernel):
            rng = derive_rng(seed, "sample", kernel_id, sample_index)
            defects = tuple(sample_defects(rng))
            if kernel_split[kernel_id] == KERNEL_TEST:
                split = "ood_test"
            elif sample_index < n_train_obs:
                split = "train"
            else:
                split = "id_test"
            metas[split].append(SampleMeta(kernel_id, sample_index, defects))

    splits: dict[str, SplitData] = {}
    for name in SPLITS:
        split_metas = metas[name]
        data = _empty_split()
        if split_metas:
            pairs = parallel_map(
                lambda m: synthesize_observation(kernel_params[m.kernel_id], m.defects),
                split_metas,
            )
            data = SplitData(
                observations=np.stack([p[0] for p in pairs]).astype(np.float32),
                maps=np.stack([p[1] for p in pairs]).astype(np.float32),
                metas=split_metas,
            )
        splits[name] = data

    dataset = Dataset(
        config=config,
        kernel_params=kernel_params,
        kernel_images=kernel_images,
        kernel_split=kernel_split,
        splits=splits,
    )
    if out_dir is not None:
        save_dataset(dataset, out_dir)
    return dataset


def _manifest_dict(dataset: Dataset) -> dict:
    config = dataset.config
    return {
        "format_version": MANIFEST_VERSION,
        "master_seed": config.master_seed,
        "kernel_count": config.kernel_count,
        "observations_per_kernel": config.observations_per_kernel,
        "image_size": IMAGE_SIZE,
        "kernel_train_fraction": config.kernel_train_fraction,
        "sample_train_fraction": config.sample_train_fraction,
        "kernels": [
            {
                "id": i,
                "fold_count": p.fold_count,
                "angular_phase": p.angular_phase,
                "radial_freq": p.radial_freq,
                "radial_phase": p.radial_phase,
                "decay": p.decay,
                "split": dataset.kernel_split[i],
            }
            for i, p in enumerate(dataset.kernel_params)
        ],
        "samples": {
            name: [
                {
                    "kernel_id": m.kernel_id,
                    "sample_index": m.sample_index,
                    "defects": [list(d) for d in m.defects],
                }
                for m in dataset.splits[name].metas
            ]
            for name in SPLITS
        },
    }


def save_dataset(dataset: Dataset, out_dir: str | Path) -> None:
    from .storage import write_blob

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST_NAME).write_text(json.dumps(_manifest_dict(dataset), indent=1) + "\n")
    write_blob(out / "kernels.qpi", dataset.kernel_images)
    for name in SPLITS:
        write_blob(out / f"{name}_observations.qpi", dataset.splits[name].observations)
        write_blob(out / f"{name}_maps.qpi", dataset.splits[name].maps)


def load_dataset(directory: str | Path) -> Dataset:
    from .storage import read_blob

    root = Path(directory)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {manifest.get('format_version')!r}")

    config = GenerationConfig(
        kernel_count=manifest["kernel_count"],
        observations_per_kernel=manifest["observations_per_kernel"],
        master_seed=manifest["master_seed"],
        kernel_train_fraction=manifest["kernel_train_fraction"],
        sample_train_fraction=manifest["sample_train_fraction"],
    )
    kernel_params = []
    kernel_split = []
    for entry in manifest["kernels"]:
        kernel_params.append(
            KernelParams(
                fold_count=entry["fold_count"],
                angular_phase=entry["angular_phase"],
                radial_freq=entry["radial_freq"],
                radial_phase=entry["radial_phase"],
                decay=entry["decay"],
            )
        )
        kernel_split.append(entry["split"])

    kernel_images = read_blob(root / "kernels.qpi")
    if kernel_images.shape != (config.kernel_count, IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"kernel blob shape {kernel_images.shape} disagrees with manifest")

    splits: dict[str, SplitData] = {}
    for name in SPLITS:
        metas = [
            SampleMeta(
                kernel_id=s["kernel_id"],
                sample_index=s["sample_index"],
                defects=tuple((int(r), int(c)) for r, c in s["defects"]),
            )
            for s in manifest["samples"][name]
        ]
        observations = read_blob(root / f"{name}_observations.qpi")
        maps = read_blob(root / f"{name}_maps.qpi")
        if len(observations) != len(metas) or len(maps) != len(metas):
            raise ValueError(f"split {name}: blob lengths disagree with manifest")
        splits[name] = SplitData(observations=observations, maps=maps, metas=metas)

    return Dataset(
        config=config,
        kernel_params=kernel_params,
        kernel_images=kernel_images,
        kernel_split=kernel_split,
        splits=splits,
    )


def expected_split_sizes(config: GenerationConfig) -> dict[str, int]:
    """Sample counts implied by the 80/20-style split fractions."""
    n_test_kernels = round(config.kernel_count * (1.0 - config.kernel_train_fraction))
    n_train_kernels = config.kernel_count - n_test_kernels
    per_kernel_train = round(config.observations_per_kernel * config.sample_train_fraction)
    return {
        "train": n_train_kernels * per_kernel_train,
        "id_test": n_train_kernels * (config.observations_per_kernel - per_kernel_train),
        "ood_test": n_test_kernels * config.observations_per_kernel,
    }
