"""Central finite-difference gradient verification."""

from __future__ import annotations

from typing import Callable

import numpy as np


def check_gradients(
    forward_loss: Callable[[], float],
    analytic_grads: Callable[[], dict[str, np.ndarray]],
    params: dict[str, np.ndarray],
    *,
    step: float = 1e-5,
    floor: float = 1e-6,
    max_params: int = 10_000,
) -> float:
    """Max relative error between analytic and finite-difference gradients.

    ``forward_loss`` evaluates the scalar loss at the current parameter
    values (it must be deterministic — any sampling noise held fixed);
    ``analytic_grads`` returns the gradient of that same loss.  Every
    parameter element is perturbed by ±step in turn, so the network must be
    small; the ``max_params`` guard keeps accidental full-size calls out.

    Relative error per element: |ga − gf| / max(floor, |ga|, |gf|).
    """
    total = sum(p.size for p in params.values())
    if total > max_params:
        raise ValueError(f"refusing finite differences over {total} > {max_params} parameters")
    grads = {name: g.copy() for name, g in analytic_grads().items()}
    worst = 0.0
    for name, param in params.items():
        analytic = grads[name]
        flat = param.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + step
            upper = forward_loss()
            flat[idx] = original - step
            lower = forward_loss()
            flat[idx] = original
            fd = (upper - lower) / (2.0 * step)
            ga = analytic.reshape(-1)[idx]
            err = abs(ga - fd) / max(floor, abs(ga), abs(fd))
            if err > worst:
                worst = err
    return worst
