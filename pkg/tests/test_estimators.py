"""scikit-learn API conformance for the estimator wrappers."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from qpiextract.dataset import GenerationConfig, generate_dataset
from qpiextract.estimators import (
    KernelAutoencoder,
    OneStepKernelExtractor,
    TikhonovDeconvolver,
    TwoStepKernelExtractor,
    stack_inputs,
)

ALL_ESTIMATORS = [KernelAutoencoder, TwoStepKernelExtractor, OneStepKernelExtractor, TikhonovDeconvolver]


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(GenerationConfig(kernel_count=5, observations_per_kernel=12, master_seed=6))


@pytest.fixture(scope="module")
def two_step(dataset):
    return TwoStepKernelExtractor(step1_epochs=2, step2_epochs=2, seed=1).fit(dataset)


@pytest.mark.parametrize("cls", ALL_ESTIMATORS)
def test_get_params_round_trips_through_clone(cls):
    est = cls()
    duplicate = clone(est)
    assert duplicate.get_params() == est.get_params()


def test_set_params_changes_behavior_knob():
    est = OneStepKernelExtractor().set_params(epochs=3, seed=9)
    assert est.epochs == 3
    assert est.get_params()["seed"] == 9


@pytest.mark.parametrize("cls", [TwoStepKernelExtractor, OneStepKernelExtractor])
def test_predict_before_fit_raises(cls):
    with pytest.raises(NotFittedError):
        cls().predict(np.zeros((1, 2, 64, 64)))


def test_transform_before_fit_raises():
    with pytest.raises(NotFittedError):
        KernelAutoencoder().transform(np.zeros((64, 64)))


def test_fit_rejects_non_dataset():
    with pytest.raises(TypeError, match="Dataset"):
        KernelAutoencoder(epochs=1).fit(np.zeros((4, 64, 64)))


class TestStackInputs:
    def test_stacks_matching_shapes(self):
        X = stack_inputs(np.zeros((3, 64, 64)), np.ones((3, 64, 64)))
        assert X.shape == (3, 2, 64, 64)
        assert X[:, 1].all()

    def test_promotes_single_pair(self):
        assert stack_inputs(np.zeros((64, 64)), np.ones((64, 64))).shape == (1, 2, 64, 64)

    def test_rejects_mismatch(self):
        with pytest.raises(ValueError, match="matching"):
            stack_inputs(np.zeros((3, 64, 64)), np.ones((2, 64, 64)))


class TestKernelAutoencoder:
    def test_round_trip_shapes(self, dataset):
        est = KernelAutoencoder(epochs=2, seed=1).fit(dataset)
        latents = est.transform(dataset.kernel_images[:3].astype(np.float64))
        assert latents.shape == (3, 256)
        decoded = est.inverse_transform(latents)
        assert decoded.shape == (3, 64, 64)

    def test_single_image_promotion(self, dataset):
        est = KernelAutoencoder(epochs=1, seed=1).fit(dataset)
        assert est.transform(dataset.kernel_images[0].astype(np.float64)).shape == (1, 256)


class TestExtractors:
    def test_two_step_predicts_kernels(self, dataset, two_step):
        split = dataset.splits["id_test"]
        X = stack_inputs(split.observations, split.maps)
        preds = two_step.predict(X)
        assert preds.shape == (len(split), 64, 64)
        assert np.isfinite(preds).all()

    def test_two_step_exposes_stage_results(self, two_step):
        assert two_step.step1_result_.best_epoch >= 1
        assert two_step.step2_result_.bundle.frozen["encoder_k"]

    def test_prefit_step1_bundle_is_reused(self, dataset, two_step):
        est = TwoStepKernelExtractor(
            step2_epochs=2, seed=1, step1_bundle=two_step.step1_result_.bundle
        ).fit(dataset)
        assert est.step1_result_ is None
        split = dataset.splits["id_test"]
        X = stack_inputs(split.observations, split.maps)
        assert np.array_equal(est.predict(X), two_step.predict(X))

    def test_one_step_seed_determinism(self, dataset):
        split = dataset.splits["ood_test"]
        X = stack_inputs(split.observations, split.maps)
        a = OneStepKernelExtractor(epochs=2, seed=3).fit(dataset).predict(X)
        b = OneStepKernelExtractor(epochs=2, seed=3).fit(dataset).predict(X)
        assert np.array_equal(a, b)

    def test_predict_rejects_unstacked_input(self, two_step):
        with pytest.raises(ValueError, match="stack_inputs"):
            two_step.predict(np.zeros((3, 64, 64)))


class TestTikhonovDeconvolver:
    def test_recovers_kernel_and_predicts_observations(self, dataset):
        kid = dataset.kernel_ids_for("test")[0]
        split = dataset.splits["ood_test"]
        rows = np.flatnonzero(split.kernel_ids == kid)[:10]
        maps = split.maps[rows].astype(np.float64)
        obs = split.observations[rows].astype(np.float64)
        est = TikhonovDeconvolver().fit(maps, obs)
        truth = dataset.kernel_images[kid].astype(np.float64)
        assert np.sqrt(np.mean((est.kernel_ - truth) ** 2)) <= 1e-2
        # support truncation leaves a small model error in the replay
        replay = est.predict(maps[:2])
        assert np.allclose(replay, obs[:2], atol=1e-2)

    def test_non_convergence_raises_not_fitted(self, dataset):
        split = dataset.splits["ood_test"]
        maps = split.maps[:4].astype(np.float64)
        obs = split.observations[:4].astype(np.float64)
        with pytest.raises(NotFittedError, match="max_iterations"):
            TikhonovDeconvolver(max_iterations=1).fit(maps, obs)

    def test_predict_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            TikhonovDeconvolver().predict(np.zeros((1, 64, 64)))
