"""Forward/adjoint operator contracts and the Tikhonov solver."""

import numpy as np
import pytest

from qpiextract.dataset import GenerationConfig, generate_dataset
from qpiextract.deconv import (
    DEFAULT_SUPPORT,
    FULL_SUPPORT,
    ForwardOperator,
    TikhonovConfig,
    apply_adjoint,
    apply_forward,
    solve_tikhonov_cg,
)
from qpiextract.rng import derive_rng

# Placing patch [[1..5],[6..10],...,[21..25]] at defects (1,2), (4,4), (7,0)
# of an 8x8 window, summed by an explicit per-defect double loop.
PINNED_THREE_DEFECT = np.array(
    [
        [6, 7, 8, 9, 10, 0, 0, 0],
        [11, 12, 13, 14, 15, 0, 0, 0],
        [16, 17, 19, 21, 23, 4, 5, 0],
        [21, 22, 29, 31, 33, 9, 10, 0],
        [0, 0, 11, 12, 13, 14, 15, 0],
        [3, 4, 21, 17, 18, 19, 20, 0],
        [8, 9, 31, 22, 23, 24, 25, 0],
        [13, 14, 15, 0, 0, 0, 0, 0],
    ],
    dtype=np.float64,
)


def centered_delta_map(size=64):
    amap = np.zeros((size, size))
    amap[size // 2, size // 2] = 1.0
    return amap


def random_instance(seed, n_maps=3, size=16, density=0.05):
    rng = derive_rng(seed, "deconv-instance")
    maps = (rng.random((n_maps, size, size)) < density).astype(np.float64)
    maps[:, size // 2, size // 2] = 1.0  # ensure every map has a defect
    patch = rng.normal(size=(size, size))
    return maps, patch


class TestForwardOperator:
    def test_rejects_non_binary_maps(self):
        with pytest.raises(ValueError, match="binary"):
            ForwardOperator(np.full((4, 4), 0.5))

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError, match="activation maps"):
            ForwardOperator(np.zeros((2, 2, 4, 4)))

    def test_rejects_bad_support(self):
        with pytest.raises(ValueError, match="support"):
            ForwardOperator(centered_delta_map(), support=(0, 5))

    def test_single_map_promoted_to_stack(self):
        op = ForwardOperator(centered_delta_map(8), support=(3, 3))
        assert op.n_maps == 1
        assert op.window == (8, 8)

    def test_default_and_full_support_shapes(self):
        assert DEFAULT_SUPPORT == (64, 64)
        assert FULL_SUPPORT == (127, 127)


class TestApplyForward:
    def test_centered_delta_is_identity(self):
        op = ForwardOperator(centered_delta_map())
        patch = derive_rng(0, "identity-patch").normal(size=(64, 64))
        out = apply_forward(op, patch)
        assert out.shape == (1, 64, 64)
        assert np.array_equal(out[0], patch)

    def test_zero_patch_gives_zero_observations(self):
        maps, _ = random_instance(1)
        op = ForwardOperator(maps, support=(16, 16))
        assert not apply_forward(op, np.zeros((16, 16))).any()

    def test_linearity(self):
        maps, _ = random_instance(2)
        op = ForwardOperator(maps, support=(16, 16))
        rng = derive_rng(2, "linearity")
        a, b = rng.normal(size=(2, 16, 16))
        combined = apply_forward(op, a + b)
        separate = apply_forward(op, a) + apply_forward(op, b)
        np.testing.assert_allclose(combined, separate, rtol=0, atol=1e-13)

    def test_pinned_three_defect_sum(self):
        amap = np.zeros((8, 8))
        for defect in [(1, 2), (4, 4), (7, 0)]:
            amap[defect] = 1.0
        op = ForwardOperator(amap, support=(5, 5))
        patch = (np.arange(25, dtype=np.float64) + 1).reshape(5, 5)
        assert np.array_equal(apply_forward(op, patch)[0], PINNED_THREE_DEFECT)

    def test_out_of_window_contributions_discarded(self):
        amap = np.zeros((8, 8))
        amap[0, 0] = 1.0  # patch centered at the corner: 3/4 falls outside
        op = ForwardOperator(amap, support=(5, 5))
        patch = np.ones((5, 5))
        out = apply_forward(op, patch)[0]
        assert out[:3, :3].sum() == 9.0
        assert out.sum() == 9.0

    def test_patch_shape_mismatch(self):
        op = ForwardOperator(centered_delta_map())
        with pytest.raises(ValueError, match="support"):
            apply_forward(op, np.zeros((32, 32)))


class TestApplyAdjoint:
    def test_centered_delta_returns_observation(self):
        op = ForwardOperator(centered_delta_map())
        obs = derive_rng(3, "adjoint-obs").normal(size=(1, 64, 64))
        assert np.array_equal(apply_adjoint(op, obs), obs[0])

    def test_zero_observations_give_zero(self):
        maps, _ = random_instance(4)
        op = ForwardOperator(maps, support=(16, 16))
        assert not apply_adjoint(op, np.zeros((3, 16, 16))).any()

    def test_adjoint_identity_on_random_pairs(self):
        maps, _ = random_instance(5, n_maps=4, size=32, density=0.03)
        op = ForwardOperator(maps, support=(21, 21))
        rng = derive_rng(5, "adjoint-pairs")
        for _ in range(100):
            x = rng.normal(size=(21, 21))
            y = rng.normal(size=(4, 32, 32))
            lhs = float(np.vdot(apply_forward(op, x), y))
            rhs = float(np.vdot(x, apply_adjoint(op, y)))
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1.0)

    def test_equals_summed_cross_correlation(self):
        maps, _ = random_instance(6, n_maps=2, size=12)
        op = ForwardOperator(maps, support=(7, 7))
        obs = derive_rng(6, "xcorr").normal(size=(2, 12, 12))
        oracle = np.zeros((7, 7))
        for k in range(2):
            for i, j in np.argwhere(maps[k]):
                for u in range(7):
                    for v in range(7):
                        y, x = i + u - 3, j + v - 3
                        if 0 <= y < 12 and 0 <= x < 12:
                            oracle[u, v] += obs[k, y, x]
        np.testing.assert_allclose(apply_adjoint(op, obs), oracle, rtol=0, atol=1e-13)

    def test_observation_shape_mismatch(self):
        op = ForwardOperator(centered_delta_map())
        with pytest.raises(ValueError, match="observations"):
            apply_adjoint(op, np.zeros((2, 64, 64)))


def dense_normal_solve(op, observations, lam):
    """Brute-force oracle: materialize (L'L + lam I) column by column."""
    n = op.support[0] * op.support[1]
    normal = np.empty((n, n))
    for idx in range(n):
        unit = np.zeros(n)
        unit[idx] = 1.0
        column = apply_adjoint(op, apply_forward(op, unit.reshape(op.support)))
        normal[:, idx] = column.ravel()
    normal += lam * np.eye(n)
    rhs = apply_adjoint(op, observations).ravel()
    return np.linalg.solve(normal, rhs).reshape(op.support)


class TestSolveTikhonov:
    def test_identity_operator_converges_in_one_iteration(self):
        op = ForwardOperator(centered_delta_map())
        kernel = derive_rng(7, "exact-kernel").normal(size=(64, 64))
        result = solve_tikhonov_cg(op, kernel[None], TikhonovConfig(lam=0.0))
        assert result.converged
        assert result.iterations == 1
        np.testing.assert_allclose(result.kernel, kernel, rtol=0, atol=1e-14)

    def test_huge_regularization_shrinks_solution_to_zero(self):
        maps, patch = random_instance(8)
        op = ForwardOperator(maps, support=(16, 16))
        obs = apply_forward(op, patch)
        result = solve_tikhonov_cg(op, obs, TikhonovConfig(lam=1e12))
        assert float(np.linalg.norm(result.kernel)) < 1e-9

    def test_matches_dense_normal_equations_solve(self):
        maps, patch = random_instance(9)
        op = ForwardOperator(maps, support=(16, 16))
        rng = derive_rng(9, "noise")
        obs = apply_forward(op, patch) + 0.01 * rng.normal(size=(3, 16, 16))
        lam = 1e-8
        result = solve_tikhonov_cg(op, obs, TikhonovConfig(lam=lam))
        assert result.converged
        dense = dense_normal_solve(op, obs, lam)
        rel = np.linalg.norm(result.kernel - dense) / np.linalg.norm(dense)
        assert rel <= 1e-8

    def test_residual_history_is_monotone(self):
        maps, patch = random_instance(10, n_maps=4)
        op = ForwardOperator(maps, support=(16, 16))
        rng = derive_rng(10, "noise")
        obs = apply_forward(op, patch) + 0.05 * rng.normal(size=(4, 16, 16))
        result = solve_tikhonov_cg(op, obs, TikhonovConfig(lam=1e-8))
        history = np.asarray(result.residual_history)
        assert history.size > 5
        assert (np.diff(history) <= 0).all()
        assert result.residual == history[-1]

    def test_non_convergence_is_flagged_not_raised(self):
        maps, patch = random_instance(11)
        op = ForwardOperator(maps, support=(16, 16))
        obs = apply_forward(op, patch)
        result = solve_tikhonov_cg(op, obs, TikhonovConfig(lam=1e-8, max_iterations=2))
        assert not result.converged
        assert result.iterations == 2

    def test_zero_observations_short_circuit(self):
        maps, _ = random_instance(12)
        op = ForwardOperator(maps, support=(16, 16))
        result = solve_tikhonov_cg(op, np.zeros((3, 16, 16)))
        assert result.converged
        assert result.iterations == 0
        assert not result.kernel.any()

    def test_solution_invariant_under_observation_permutation(self):
        maps, patch = random_instance(13, n_maps=5)
        rng = derive_rng(13, "noise")
        obs = None
        op = ForwardOperator(maps, support=(16, 16))
        obs = apply_forward(op, patch) + 0.01 * rng.normal(size=(5, 16, 16))
        perm = derive_rng(13, "perm").permutation(5)
        op_perm = ForwardOperator(maps[perm], support=(16, 16))
        a = solve_tikhonov_cg(op, obs, TikhonovConfig(lam=1e-8)).kernel
        b = solve_tikhonov_cg(op_perm, obs[perm], TikhonovConfig(lam=1e-8)).kernel
        assert np.linalg.norm(a - b) / np.linalg.norm(a) <= 1e-10

    @pytest.mark.parametrize(
        "kwargs",
        [{"lam": -1.0}, {"max_iterations": 0}, {"tolerance": 0.0}],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TikhonovConfig(**kwargs)


class TestRecoveryFromSimulatedData:
    def test_recovers_kernel_from_ten_observations(self):
        dataset = generate_dataset(
            GenerationConfig(kernel_count=5, observations_per_kernel=12, master_seed=6)
        )
        kid = dataset.kernel_ids_for("test")[0]
        split = dataset.splits["ood_test"]
        rows = np.flatnonzero(split.kernel_ids == kid)[:10]
        op = ForwardOperator(split.maps[rows].astype(np.float64))
        result = solve_tikhonov_cg(op, split.observations[rows].astype(np.float64))
        assert result.converged
        truth = dataset.kernel_images[kid].astype(np.float64)
        rmse = float(np.sqrt(np.mean((result.kernel - truth) ** 2)))
        assert rmse <= 1e-2
