"""Named sequential container with a flat parameter namespace."""

from __future__ import annotations

import numpy as np


class Sequential:
    """Chain of named layers; parameters addressed as "<layer>.<param>"."""

    def __init__(self, layers: list[tuple[str, object]]):
        names = [name for name, _ in layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in {names}")
        self.layers = list(layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for _, layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for _, layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, layer in self.layers:
            for key, value in layer.params().items():
                out[f"{name}.{key}"] = value
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, layer in self.layers:
            for key, value in layer.grads().items():
                out[f"{name}.{key}"] = value
        return out

    def zero_grads(self) -> None:
        for _, layer in self.layers:
            layer.zero_grads()

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        """Copy values into the existing parameter arrays (shapes must match)."""
        own = self.parameters()
        missing = sorted(set(own) - set(values))
        if missing:
            raise ValueError(f"missing parameters: {missing}")
        for name, param in own.items():
            incoming = np.asarray(values[name], dtype=np.float64)
            if incoming.shape != param.shape:
                raise ValueError(f"{name}: shape {incoming.shape} does not match {param.shape}")
            param[:] = incoming
