"""Network definitions sharing a 4x8x8 latent grid.

Three components: a kernel encoder (1-channel input), a kernel decoder, and
an observation encoder taking the stacked (observation, activation map) pair
as 2 channels but otherwise identical to the kernel encoder.  Encoders end
in a channel split into mean and log-variance halves; the decoder output is
linear and unclamped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffnet import (
    Conv2d,
    Sequential,
    SiLU,
    SplitLatent,
    Upsample2x,
    decode_checkpoint,
    encode_checkpoint,
)
from .simulate import IMAGE_SIZE

LATENT_CHANNELS = 4
LATENT_GRID = 8
LATENT_SHAPE = (LATENT_CHANNELS, LATENT_GRID, LATENT_GRID)

ENCODER_WIDTHS = (16, 32, 64)
DECODER_WIDTHS = (64, 32, 16, 8)

# Narrow variants used for finite-difference gradient validation, where the
# parameter count must stay small enough to probe every coordinate.
REDUCED_ENCODER_WIDTHS = (2, 3, 4)
REDUCED_DECODER_WIDTHS = (4, 3, 2, 2)

BUNDLE_ARCH_ID = "qpi-latent-bundle/v1"
COMPONENT_NAMES = ("encoder_k", "decoder_k", "encoder_y")


def split_latent_channels(head: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split an encoder head (batch, 2C, g, g) into mean and logvar halves."""
    return SplitLatent().forward(head)


def build_encoder(
    rng: np.random.Generator | None,
    *,
    in_channels: int = 1,
    widths: tuple[int, int, int] = ENCODER_WIDTHS,
    latent_channels: int = LATENT_CHANNELS,
) -> Sequential:
    """Three stride-2 stages then a 1:1 head emitting mean+logvar channels."""
    w1, w2, w3 = widths
    return Sequential(
        [
            ("conv1", Conv2d(in_channels, w1, stride=2, rng=rng)),
            ("act1", SiLU()),
            ("conv2", Conv2d(w1, w2, stride=2, rng=rng)),
            ("act2", SiLU()),
            ("conv3", Conv2d(w2, w3, stride=2, rng=rng)),
            ("act3", SiLU()),
            ("conv4", Conv2d(w3, 2 * latent_channels, rng=rng)),
        ]
    )


def build_decoder(
    rng: np.random.Generator | None,
    *,
    widths: tuple[int, int, int, int] = DECODER_WIDTHS,
    latent_channels: int = LATENT_CHANNELS,
    out_channels: int = 1,
) -> Sequential:
    """Latent head, three upsample+conv stages back to 64x64, linear output."""
    w1, w2, w3, w4 = widths
    return Sequential(
        [
            ("conv1", Conv2d(latent_channels, w1, rng=rng)),
            ("act1", SiLU()),
            ("up1", Upsample2x()),
            ("conv2", Conv2d(w1, w2, rng=rng)),
            ("act2", SiLU()),
            ("up2", Upsample2x()),
            ("conv3", Conv2d(w2, w3, rng=rng)),
            ("act3", SiLU()),
            ("up3", Upsample2x()),
            ("conv4", Conv2d(w3, w4, rng=rng)),
            ("act4", SiLU()),
            ("conv5", Conv2d(w4, out_channels, rng=rng)),
        ]
    )


def adapt_encoder_to_observations(encoder_k: Sequential) -> Sequential:
    """Clone a trained kernel encoder into a 2-channel observation encoder.

    The first convolution's single input channel is duplicated across both
    input channels at half weight, so the clone initially responds to the
    channel sum the way the original responded to its one channel; every
    other parameter is copied verbatim.
    """
    arch = _encoder_arch(encoder_k)
    if arch["in_channels"] != 1:
        raise ValueError("source encoder must take a single input channel")
    clone = build_encoder(
        None,
        in_channels=2,
        widths=tuple(arch["widths"]),
        latent_channels=arch["latent_channels"],
    )
    params = encoder_k.parameters()
    adapted = {name: value.copy() for name, value in params.items()}
    first = params["conv1.weight"]
    adapted["conv1.weight"] = np.concatenate([first, first], axis=1) * 0.5
    clone.load_parameters(adapted)
    return clone


@dataclass(frozen=True)
class LatentCode:
    """Mean latent grid plus the log-variance half kept during training."""

    mean: np.ndarray
    logvar: np.ndarray | None = None

    def __post_init__(self) -> None:
        for label, block in (("mean", self.mean), ("logvar", self.logvar)):
            if block is None:
                continue
            if block.shape != LATENT_SHAPE:
                raise ValueError(f"latent {label} must have shape {LATENT_SHAPE}, got {block.shape}")
            if not np.all(np.isfinite(block)):
                raise ValueError(f"latent {label} contains non-finite values")


def _as_plane(image: np.ndarray, label: str) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"{label} must be {IMAGE_SIZE}x{IMAGE_SIZE}, got shape {arr.shape}")
    return arr


def encode_kernel(encoder_k: Sequential, kernel: np.ndarray, *, training: bool = False) -> LatentCode:
    """Deterministic latent of a kernel image (logvar kept only in training)."""
    plane = _as_plane(kernel, "kernel image")
    mean, logvar = split_latent_channels(encoder_k.forward(plane[None, None]))
    return LatentCode(mean[0], logvar[0] if training else None)


def encode_observation(encoder_y: Sequential, observation: np.ndarray, activation_map: np.ndarray) -> LatentCode:
    """Mean latent of the stacked (observation, activation map) channels."""
    obs = _as_plane(observation, "observation")
    amap = _as_plane(activation_map, "activation map")
    if not np.all((amap == 0.0) | (amap == 1.0)):
        raise ValueError("activation map must be binary")
    stacked = np.stack([obs, amap])[None]
    mean, _ = split_latent_channels(encoder_y.forward(stacked))
    return LatentCode(mean[0])


def decode_kernel(decoder_k: Sequential, code: LatentCode | np.ndarray) -> np.ndarray:
    """Decode a latent mean back to a 64x64 kernel estimate (unclamped)."""
    mean = code.mean if isinstance(code, LatentCode) else np.asarray(code, dtype=np.float64)
    if mean.shape != LATENT_SHAPE:
        raise ValueError(f"latent must have shape {LATENT_SHAPE}, got {mean.shape}")
    return decoder_k.forward(mean[None])[0, 0]


@dataclass
class ModelBundle:
    """The trained components plus which of them are frozen."""

    networks: dict[str, Sequential]
    frozen: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in self.networks:
            if name not in COMPONENT_NAMES:
                raise ValueError(f"unknown component {name!r}; expected subset of {COMPONENT_NAMES}")
        self.frozen = {name: bool(self.frozen.get(name, False)) for name in self.networks}

    def __getitem__(self, name: str) -> Sequential:
        return self.networks[name]


def _encoder_arch(seq: Sequential) -> dict:
    params = seq.parameters()
    widths = [int(params[f"conv{i}.weight"].shape[0]) for i in (1, 2, 3)]
    return {
        "kind": "encoder",
        "widths": widths,
        "in_channels": int(params["conv1.weight"].shape[1]),
        "latent_channels": int(params["conv4.weight"].shape[0]) // 2,
    }


def _decoder_arch(seq: Sequential) -> dict:
    params = seq.parameters()
    widths = [int(params[f"conv{i}.weight"].shape[0]) for i in (1, 2, 3, 4)]
    return {
        "kind": "decoder",
        "widths": widths,
        "latent_channels": int(params["conv1.weight"].shape[1]),
        "out_channels": int(params["conv5.weight"].shape[0]),
    }


def _component_arch(name: str, seq: Sequential) -> dict:
    return _decoder_arch(seq) if name == "decoder_k" else _encoder_arch(seq)


def _build_component(name: str, arch: dict) -> Sequential:
    if arch.get("kind") == "decoder":
        return build_decoder(
            None,
            widths=tuple(arch["widths"]),
            latent_channels=arch["latent_channels"],
            out_channels=arch["out_channels"],
        )
    return build_encoder(
        None,
        in_channels=arch["in_channels"],
        widths=tuple(arch["widths"]),
        latent_channels=arch["latent_channels"],
    )


def serialize_weights(
    bundle: ModelBundle,
    *,
    extra_metadata: dict | None = None,
    extra_blocks: dict[str, np.ndarray] | None = None,
) -> bytes:
    """Encode a bundle (weights, architecture, frozen flags) to bytes.

    `extra_blocks` carries non-model arrays such as optimizer moments; their
    names must not collide with any `<component>.` prefix.
    """
    blocks: dict[str, np.ndarray] = {}
    arch: dict[str, dict] = {}
    for name in COMPONENT_NAMES:
        if name not in bundle.networks:
            continue
        seq = bundle.networks[name]
        arch[name] = _component_arch(name, seq)
        for pname, value in seq.parameters().items():
            blocks[f"{name}.{pname}"] = value
    for name, value in (extra_blocks or {}).items():
        if name.split(".", 1)[0] in COMPONENT_NAMES:
            raise ValueError(f"extra block {name!r} collides with a component namespace")
        blocks[name] = value
    metadata = {"arch": arch, "frozen": bundle.frozen}
    if extra_metadata:
        metadata.update(extra_metadata)
    return encode_checkpoint(blocks, arch_id=BUNDLE_ARCH_ID, metadata=metadata)


def deserialize_weights(raw: bytes) -> ModelBundle:
    """Rebuild a bundle from bytes produced by serialize_weights."""
    ckpt = decode_checkpoint(raw, "model bundle")
    return bundle_from_checkpoint(ckpt)


def bundle_from_checkpoint(ckpt) -> ModelBundle:
    """Rebuild a ModelBundle from an already-decoded checkpoint."""
    if ckpt.arch_id != BUNDLE_ARCH_ID:
        raise ValueError(f"unexpected architecture id {ckpt.arch_id!r}")
    arch = ckpt.metadata.get("arch", {})
    networks: dict[str, Sequential] = {}
    for name, component_arch in arch.items():
        seq = _build_component(name, component_arch)
        prefix = f"{name}."
        params = {
            pname[len(prefix) :]: value
            for pname, value in ckpt.blocks.items()
            if pname.startswith(prefix)
        }
        seq.load_parameters(params)
        networks[name] = seq
    frozen = {name: bool(flag) for name, flag in ckpt.metadata.get("frozen", {}).items()}
    return ModelBundle(networks=networks, frozen=frozen)
