"""Minimal differentiable-network substrate.

Exactly the layer kinds the models need (3x3 conv, SiLU, nearest 2x
upsample, latent split, reparameterization), the Adam optimizer, a central
finite-difference gradient checker, and bit-exact weight checkpoints.
"""

from .adam import Adam
from .checkpoint import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    Checkpoint,
    CorruptCheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    read_checkpoint,
    write_checkpoint,
)
from .gradcheck import check_gradients
from .layers import Conv2d, Reparameterize, SiLU, SplitLatent, Upsample2x
from .network import Sequential

__all__ = [
    "Adam",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "Checkpoint",
    "Conv2d",
    "CorruptCheckpointError",
    "Reparameterize",
    "Sequential",
    "SiLU",
    "SplitLatent",
    "Upsample2x",
    "check_gradients",
    "decode_checkpoint",
    "encode_checkpoint",
    "read_checkpoint",
    "write_checkpoint",
]
