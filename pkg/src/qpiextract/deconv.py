"""Classical kernel recovery by Tikhonov-regularized least squares.

Given activation maps, the observation is linear in the kernel patch:
each defect places one shifted copy of the patch, the copies sum, and
the result is cropped to the observation window.  That makes recovery a
regularized least-squares problem, solved here via a Krylov iteration on
the normal equations.  The iteration uses the conjugate-residual update
rather than textbook conjugate gradients: both converge to the same
solution, but only the former guarantees a monotonically non-increasing
residual norm, which callers rely on when reading convergence reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulate import IMAGE_SIZE

__all__ = [
    "DEFAULT_SUPPORT",
    "FULL_SUPPORT",
    "ForwardOperator",
    "SolveResult",
    "TikhonovConfig",
    "apply_adjoint",
    "apply_forward",
    "solve_tikhonov_cg",
]

DEFAULT_SUPPORT = (IMAGE_SIZE, IMAGE_SIZE)
FULL_SUPPORT = (2 * IMAGE_SIZE - 1, 2 * IMAGE_SIZE - 1)


class ForwardOperator:
    """Linear map from a kernel patch to a stack of predicted observations.

    The patch is centered on pixel ``(support[0] // 2, support[1] // 2)``;
    contributions falling outside the observation window are discarded,
    which is the sole source of model error when the true kernel has
    tails wider than the support.
    """

    def __init__(
        self,
        maps: np.ndarray,
        support: tuple[int, int] = DEFAULT_SUPPORT,
    ):
        arr = np.asarray(maps, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ValueError(
                f"activation maps must be (H, W) or (k, H, W), got shape {np.shape(maps)}"
            )
        if not np.isin(arr, (0.0, 1.0)).all():
            raise ValueError("activation maps must be binary")
        sh, sw = int(support[0]), int(support[1])
        if sh < 1 or sw < 1:
            raise ValueError(f"support dimensions must be positive, got {support}")
        self.maps = arr
        self.support = (sh, sw)
        self.window = (arr.shape[1], arr.shape[2])
        self._placements = self._build_placements()

    @property
    def n_maps(self) -> int:
        return self.maps.shape[0]

    def _build_placements(self) -> list[tuple[int, slice, slice, slice, slice]]:
        """Precompute (map index, window slices, patch slices) per defect."""
        sh, sw = self.support
        ch, cw = sh // 2, sw // 2
        wh, ww = self.window
        placements = []
        for k, amap in enumerate(self.maps):
            for i, j in np.argwhere(amap):
                y0, y1 = max(0, i - ch), min(wh, i - ch + sh)
                x0, x1 = max(0, j - cw), min(ww, j - cw + sw)
                if y0 >= y1 or x0 >= x1:
                    continue
                placements.append(
                    (
                        int(k),
                        slice(y0, y1),
                        slice(x0, x1),
                        slice(y0 - (i - ch), y1 - (i - ch)),
                        slice(x0 - (j - cw), x1 - (j - cw)),
                    )
                )
        return placements


@dataclass(frozen=True)
class TikhonovConfig:
    """Solver settings: ridge weight plus iteration budget and tolerance."""

    lam: float = 1e-8
    max_iterations: int = 2000
    tolerance: float = 1e-12

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")


@dataclass(frozen=True)
class SolveResult:
    """Kernel estimate plus a convergence report.

    ``residual_history`` holds the relative normal-equation residual
    after each iteration; it is non-increasing by construction.
    """

    kernel: np.ndarray
    iterations: int
    residual: float
    residual_history: tuple[float, ...]
    converged: bool


def apply_forward(op: ForwardOperator, kernel_patch: np.ndarray) -> np.ndarray:
    """Predict observations: one shifted patch copy per defect, summed, cropped."""
    patch = np.asarray(kernel_patch, dtype=np.float64)
    if patch.shape != op.support:
        raise ValueError(f"kernel patch shape {patch.shape} != operator support {op.support}")
    out = np.zeros((op.n_maps, *op.window))
    for k, wy, wx, py, px in op._placements:
        out[k, wy, wx] += patch[py, px]
    return out


def apply_adjoint(op: ForwardOperator, observations: np.ndarray) -> np.ndarray:
    """Cross-correlate each observation with its map and sum over observations."""
    obs = np.asarray(observations, dtype=np.float64)
    expected = (op.n_maps, *op.window)
    if obs.shape != expected:
        raise ValueError(f"observations shape {obs.shape} != expected {expected}")
    out = np.zeros(op.support)
    for k, wy, wx, py, px in op._placements:
        out[py, px] += obs[k, wy, wx]
    return out


def solve_tikhonov_cg(
    op: ForwardOperator,
    observations: np.ndarray,
    config: TikhonovConfig | None = None,
) -> SolveResult:
    """Minimize ||L(A) - Y||^2 + lam * ||A||^2 over kernel patches A.

    Works on the normal equations (L'L + lam I) A = L'Y from a zero start.
    Non-convergence within the iteration budget is reported through the
    ``converged`` flag, never raised.
    """
    if config is None:
        config = TikhonovConfig()
    obs = np.asarray(observations, dtype=np.float64)
    b = apply_adjoint(op, obs)

    def normal(v: np.ndarray) -> np.ndarray:
        return apply_adjoint(op, apply_forward(op, v)) + config.lam * v

    x = np.zeros(op.support)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return SolveResult(x, 0, 0.0, (), True)
    r = b.copy()
    p = r.copy()
    ar = normal(r)
    ap = ar.copy()
    r_dot_ar = float(np.vdot(r, ar))
    history: list[float] = []
    converged = False
    for _ in range(config.max_iterations):
        denom = float(np.vdot(ap, ap))
        if denom == 0.0:
            break
        alpha = r_dot_ar / denom
        x += alpha * p
        r -= alpha * ap
        rel = float(np.linalg.norm(r)) / b_norm
        history.append(rel)
        if rel <= config.tolerance:
            converged = True
            break
        ar = normal(r)
        r_dot_ar_new = float(np.vdot(r, ar))
        beta = r_dot_ar_new / r_dot_ar
        p = r + beta * p
        ap = ar + beta * ap
        r_dot_ar = r_dot_ar_new
    return SolveResult(
        kernel=x,
        iterations=len(history),
        residual=history[-1] if history else 0.0,
        residual_history=tuple(history),
        converged=converged,
    )
