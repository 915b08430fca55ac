"""Layers with explicit forward/backward passes, all math in float64.

Convolution is implemented as cross-correlation (the learned-filter
convention) with zero padding 1 and a fixed 3x3 kernel, which is all the
model zoo uses.  Two execution strategies exist with identical math but
different memory layouts; the cheaper one is picked per shape:

* ``im2col``: gather 3x3 patches into a matrix and run one GEMM.  Wins when
  the patch matrix is small (stride 2, few input channels).
* ``gemmshift``: one GEMM of the padded input against all nine taps at once,
  then nine shifted additions.  Wins for stride-1 layers with large spatial
  extent, where building the patch matrix would dominate.
"""

from __future__ import annotations

import numpy as np

KERNEL_SIZE = 3
PADDING = 1


def _out_size(size: int, stride: int) -> int:
    return (size + 2 * PADDING - KERNEL_SIZE) // stride + 1


class Conv2d:
    """3x3 convolution, zero padding 1, stride 1 or 2, per-channel bias."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        *,
        stride: int = 1,
        rng: np.random.Generator | None = None,
    ):
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        limit = 1.0 / np.sqrt(in_channels * KERNEL_SIZE * KERNEL_SIZE)
        if rng is None:
            weight = np.zeros((out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE))
        else:
            weight = rng.uniform(-limit, limit, size=(out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE))
        self.weight = weight
        self.bias = np.zeros(out_channels)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache: tuple | None = None

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def grads(self) -> dict[str, np.ndarray]:
        return {"weight": self.grad_weight, "bias": self.grad_bias}

    def zero_grads(self) -> None:
        self.grad_weight[:] = 0.0
        self.grad_bias[:] = 0.0

    def _strategy(self, height: int, width: int) -> str:
        if self.stride == 2:
            return "im2col"
        patch_cost = _out_size(height, 1) * _out_size(width, 1) * self.in_channels
        frame_cost = (height + 2) * (width + 2) * self.out_channels
        return "im2col" if patch_cost <= frame_cost else "gemmshift"

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"expected (N, {self.in_channels}, H, W) input, got {x.shape}")
        n, _, h, w = x.shape
        ho, wo = _out_size(h, self.stride), _out_size(w, self.stride)
        xp = np.pad(x, ((0, 0), (0, 0), (PADDING, PADDING), (PADDING, PADDING)))
        strategy = self._strategy(h, w)
        if strategy == "im2col":
            cols = self._im2col(xp, ho, wo)
            out = cols @ self.weight.reshape(self.out_channels, -1).T + self.bias
            out = out.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        else:
            z = self._tap_products(xp)
            out = np.empty((n, ho, wo, self.out_channels))
            out[:] = self.bias
            for tap in range(9):
                ki, kj = divmod(tap, 3)
                out += z[:, ki : ki + ho, kj : kj + wo, tap]
            out = out.transpose(0, 3, 1, 2)
        self._cache = (xp, (n, h, w, ho, wo), strategy)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        xp, (n, h, w, ho, wo), strategy = self._cache
        s = self.stride
        if strategy == "im2col":
            grad_flat = grad_out.transpose(0, 2, 3, 1).reshape(n * ho * wo, self.out_channels)
            cols = self._im2col(xp, ho, wo)
            self.grad_weight += (grad_flat.T @ cols).reshape(self.weight.shape)
            self.grad_bias += grad_flat.sum(axis=0)
            grad_cols = grad_flat @ self.weight.reshape(self.out_channels, -1)
            grad_taps = grad_cols.reshape(n, ho, wo, self.in_channels, 3, 3)
            grad_xp = np.zeros_like(xp)
            for ki in range(3):
                for kj in range(3):
                    dest = grad_xp[:, :, ki : ki + s * (ho - 1) + 1 : s, kj : kj + s * (wo - 1) + 1 : s]
                    dest += grad_taps[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
        else:
            grad_out_l = grad_out.transpose(0, 2, 3, 1)
            hp, wp = h + 2, w + 2
            grad_z = np.zeros((n, hp, wp, 9, self.out_channels))
            for tap in range(9):
                ki, kj = divmod(tap, 3)
                grad_z[:, ki : ki + ho, kj : kj + wo, tap] = grad_out_l
            grad_z_flat = grad_z.reshape(n * hp * wp, 9 * self.out_channels)
            xl = xp.transpose(0, 2, 3, 1).reshape(n * hp * wp, self.in_channels)
            w_mat = self.weight.transpose(1, 2, 3, 0).reshape(self.in_channels, 9 * self.out_channels)
            self.grad_weight += (
                (xl.T @ grad_z_flat).reshape(self.in_channels, 3, 3, self.out_channels).transpose(3, 0, 1, 2)
            )
            self.grad_bias += grad_out_l.sum(axis=(0, 1, 2))
            grad_xp = (grad_z_flat @ w_mat.T).reshape(n, hp, wp, self.in_channels).transpose(0, 3, 1, 2)
        return grad_xp[:, :, PADDING : PADDING + h, PADDING : PADDING + w].copy()

    def _im2col(self, xp: np.ndarray, ho: int, wo: int) -> np.ndarray:
        n = xp.shape[0]
        st = xp.strides
        s = self.stride
        view = np.lib.stride_tricks.as_strided(
            xp,
            shape=(n, self.in_channels, ho, wo, KERNEL_SIZE, KERNEL_SIZE),
            strides=(st[0], st[1], st[2] * s, st[3] * s, st[2], st[3]),
            writeable=False,
        )
        return view.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, self.in_channels * 9)

    def _tap_products(self, xp: np.ndarray) -> np.ndarray:
        n, _, hp, wp = xp.shape
        xl = xp.transpose(0, 2, 3, 1).reshape(n * hp * wp, self.in_channels)
        w_mat = self.weight.transpose(1, 2, 3, 0).reshape(self.in_channels, 9 * self.out_channels)
        return (xl @ w_mat).reshape(n, hp, wp, 9, self.out_channels)


class SiLU:
    """x * sigmoid(x); derivative at 0 is exactly 0.5."""

    def __init__(self):
        self._cache = None

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def zero_grads(self) -> None:
        pass

    def forward(self, x: np.ndarray) -> np.ndarray:
        sig = 1.0 / (1.0 + np.exp(-x))
        self._cache = (x, sig)
        return x * sig

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x, sig = self._cache
        return grad_out * sig * (1.0 + x * (1.0 - sig))


class Upsample2x:
    """Nearest-neighbour 2x upsampling (each pixel duplicated into 2x2)."""

    def __init__(self):
        self._shape = None

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def zero_grads(self) -> None:
        pass

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        n, c, h, w = self._shape
        return grad_out.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


class SplitLatent:
    """Split channels into equal (mean, logvar) halves."""

    def __init__(self):
        self._channels = None

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if x.shape[1] % 2 != 0:
            raise ValueError(f"channel count must be even to split, got {x.shape[1]}")
        self._channels = x.shape[1]
        half = x.shape[1] // 2
        return x[:, :half].copy(), x[:, half:].copy()

    def backward(self, grad_mean: np.ndarray, grad_logvar: np.ndarray) -> np.ndarray:
        return np.concatenate([grad_mean, grad_logvar], axis=1)


class Reparameterize:
    """z = mean + exp(logvar / 2) * noise, with caller-supplied unit normals.

    Passing ``noise=None`` selects the deterministic mean path (z = mean),
    used at validation and inference time.
    """

    def __init__(self):
        self._cache = None

    def forward(self, mean: np.ndarray, logvar: np.ndarray, noise: np.ndarray | None) -> np.ndarray:
        if noise is None:
            self._cache = None
            return mean.copy()
        if noise.shape != mean.shape:
            raise ValueError(f"noise shape {noise.shape} must match mean shape {mean.shape}")
        scale = np.exp(0.5 * logvar)
        self._cache = (scale, noise)
        return mean + scale * noise

    def backward(self, grad_z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self._cache is None:
            return grad_z.copy(), np.zeros_like(grad_z)
        scale, noise = self._cache
        return grad_z.copy(), grad_z * (0.5 * scale * noise)
