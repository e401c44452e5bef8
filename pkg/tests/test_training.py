"""Losses, Adam, clipping and the training loop."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from gwm_pictures.errors import LabelDomainError, NonFiniteLossError
from gwm_pictures.gwm import gradient, random_init
from gwm_pictures.languages import generate_dataset
from gwm_pictures.structs import BINARY_ALPHABET, GradientAccumulator, GwmModel, LabeledExample, Picture
from gwm_pictures.structs.model import tensor_key
from gwm_pictures.tensor_core import DenseTensor, finite_difference_gradient
from gwm_pictures.training import (
    AdamSettings,
    AdamState,
    TrainConfig,
    adam_step,
    ce_loss,
    classify_regression,
    classify_sigmoid,
    clip_gradients,
    evaluate_dataset,
    mse_loss,
    train,
)


def constant_model(value: float) -> GwmModel:
    """d=1 model whose value on the 1x1 picture "a" is ``value``."""
    return GwmModel.from_arrays(
        BINARY_ALPHABET,
        {"a": np.full((1, 1, 1, 1), value), "b": np.ones((1, 1, 1, 1))},
        {side: np.ones(1) for side in "wnes"},
    )


def random_batch(rng, size: int, labels=(0.0, 1.0)) -> list[LabeledExample]:
    return [
        LabeledExample(
            picture=Picture(grid=rng.integers(2, size=tuple(rng.integers(1, 4, size=2)))),
            label=float(rng.choice(labels)),
        )
        for _ in range(size)
    ]


def loss_gradient_error(loss_fn, model: GwmModel, batch) -> float:
    _, grads = loss_fn(model, batch)
    worst = 0.0
    for key, value in model.parameters().items():
        numeric = finite_difference_gradient(
            lambda x: loss_fn(model.with_parameters({key: x.array}), batch)[0],
            DenseTensor.from_array(value),
            1e-5,
        ).array
        scale = max(1.0, np.abs(numeric).max())
        worst = max(worst, np.abs(grads.as_dict()[key] - numeric).max() / scale)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(99)


@pytest.fixture
def one_parameter_grads():
    """Gradient accumulator shaped like a d=1 model, zero except T[a]."""

    def build(value: float) -> GradientAccumulator:
        grads = GradientAccumulator.zeros_like(constant_model(1.0))
        grads.tensors["a"][...] = value
        return grads

    return build


class TestLosses:
    def test_mse_zero_on_exact_model(self):
        batch = [LabeledExample(picture=Picture.from_rows(["a"]), label=0.3)]
        loss, grads = mse_loss(constant_model(0.3), batch)
        assert loss == pytest.approx(0.0, abs=1e-30)
        assert grads.global_norm() == pytest.approx(0.0, abs=1e-15)

    def test_mse_single_example_chain_rule(self, rng):
        model = random_init(2, BINARY_ALPHABET, 0.6, seed=4)
        picture = Picture(grid=rng.integers(2, size=(2, 3)))
        value, value_grads = gradient(model, picture)
        loss, grads = mse_loss(model, [LabeledExample(picture=picture, label=0.0)])
        assert loss == pytest.approx(value**2, rel=1e-12)
        for key, grad in grads.items():
            np.testing.assert_allclose(grad, 2 * value * value_grads.as_dict()[key], rtol=1e-12, atol=1e-15)

    def test_mse_matches_finite_differences(self, rng):
        model = random_init(2, BINARY_ALPHABET, 0.6, seed=5)
        assert loss_gradient_error(mse_loss, model, random_batch(rng, 6, (0.0, 1.0, 2.0))) < 1e-5

    def test_ce_at_zero_output(self):
        batch = [LabeledExample(picture=Picture.from_rows(["a"]), label=1.0)]
        loss, _ = ce_loss(constant_model(0.0), batch)
        assert loss == pytest.approx(math.log(2.0), rel=1e-12)

    def test_ce_vanishes_for_confident_positive(self):
        batch = [LabeledExample(picture=Picture.from_rows(["a"]), label=1.0)]
        loss, _ = ce_loss(constant_model(50.0), batch)
        assert 0.0 <= loss < 1e-12

    def test_ce_matches_finite_differences(self, rng):
        model = random_init(2, BINARY_ALPHABET, 0.6, seed=6)
        assert loss_gradient_error(ce_loss, model, random_batch(rng, 6)) < 1e-5

    def test_ce_rejects_regression_labels(self, rng):
        with pytest.raises(LabelDomainError):
            ce_loss(constant_model(1.0), random_batch(rng, 4, (2.0,)))

    def test_losses_are_non_negative(self, rng):
        model = random_init(2, BINARY_ALPHABET, 1.0, seed=7)
        batch = random_batch(rng, 10)
        assert mse_loss(model, batch)[0] >= 0.0
        assert ce_loss(model, batch)[0] >= 0.0

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            mse_loss(constant_model(1.0), [])


class TestAdam:
    def test_zero_gradient_leaves_parameters(self, one_parameter_grads):
        model = constant_model(0.7)
        updated, state = adam_step(model, one_parameter_grads(0.0), AdamState(), AdamSettings(learning_rate=0.1))
        assert updated == model
        assert state.step == 1

    def test_constant_gradient_steps_by_learning_rate(self, one_parameter_grads):
        model, state = constant_model(1.0), AdamState()
        settings = AdamSettings(learning_rate=0.01)
        for _ in range(50):
            before = model.tensors["a"].item()
            model, state = adam_step(model, one_parameter_grads(-3.0), state, settings)
            assert model.tensors["a"].item() - before == pytest.approx(0.01, rel=1e-6)

    def test_two_steps_on_a_quadratic(self):
        # minimise x^2 through T[a]; g = 2x
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        settings = AdamSettings(learning_rate=lr, beta1=b1, beta2=b2, eps=eps)
        model, state = constant_model(1.0), AdamState()
        x, m, v = 1.0, 0.0, 0.0
        for t in (1, 2):
            g = 2.0 * model.tensors["a"].item()
            grads = GradientAccumulator.zeros_like(model)
            grads.tensors["a"][...] = g
            model, state = adam_step(model, grads, state, settings)

            m = b1 * m + (1 - b1) * 2.0 * x
            v = b2 * v + (1 - b2) * (2.0 * x) ** 2
            x -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
            assert model.tensors["a"].item() == pytest.approx(x, rel=1e-12)
        assert x == pytest.approx(0.80041, abs=1e-4)

    def test_zero_betas_give_sign_descent(self, one_parameter_grads):
        settings = AdamSettings(learning_rate=0.5, beta1=0.0, beta2=0.0, eps=1e-8)
        updated, _ = adam_step(constant_model(1.0), one_parameter_grads(4.0), AdamState(), settings)
        assert updated.tensors["a"].item() == pytest.approx(1.0 - 0.5 * 4.0 / (4.0 + 1e-8), rel=1e-15)

    def test_inputs_are_not_mutated(self, one_parameter_grads):
        model, state = constant_model(1.0), AdamState()
        _, new_state = adam_step(model, one_parameter_grads(1.0), state, AdamSettings())
        assert state.step == 0 and not state.first
        assert new_state.first[tensor_key("a")].item() == pytest.approx(0.1)


class TestClip:
    def test_below_threshold_is_untouched(self, one_parameter_grads):
        grads = one_parameter_grads(0.5)
        assert clip_gradients(grads, 1.0) is grads

    def test_scales_to_threshold(self, one_parameter_grads):
        grads = one_parameter_grads(10.0)
        clipped = clip_gradients(grads, 1.0)
        assert clipped.global_norm() == pytest.approx(1.0, abs=1e-12)
        assert clipped.tensors["a"].item() == pytest.approx(1.0)

    def test_direction_is_preserved(self, rng):
        model = random_init(2, BINARY_ALPHABET, 1.0, seed=3)
        _, grads = gradient(model, Picture(grid=rng.integers(2, size=(3, 3))))
        clipped = clip_gradients(grads, 1e-3)
        flat = np.concatenate([grad.ravel() for _, grad in grads.items()])
        flat_clipped = np.concatenate([grad.ravel() for _, grad in clipped.items()])
        cosine = flat @ flat_clipped / (np.linalg.norm(flat) * np.linalg.norm(flat_clipped))
        assert cosine == pytest.approx(1.0, abs=1e-12)

    def test_threshold_must_be_positive(self, one_parameter_grads):
        with pytest.raises(ValueError):
            clip_gradients(one_parameter_grads(1.0), 0.0)


class TestClassify:
    def test_regression_threshold_is_strict(self):
        picture = Picture.from_rows(["a"])
        assert not classify_regression(constant_model(0.4999), picture)
        assert not classify_regression(constant_model(0.5), picture)
        assert classify_regression(constant_model(0.5001), picture)

    def test_sigmoid_boundary_is_positive(self):
        picture = Picture.from_rows(["a"])
        assert classify_sigmoid(constant_model(0.0), picture)
        assert not classify_sigmoid(constant_model(-1e-9), picture)

    def test_evaluate_dataset(self):
        dataset = generate_dataset("bs", [(2, 2)], 10, 0.5, seed=0)
        zero = constant_model(0.0)
        metrics = evaluate_dataset(zero, dataset, "mse")
        assert metrics.loss == pytest.approx(np.mean(dataset.labels() ** 2))
        assert metrics.accuracy == pytest.approx(0.5)


class TestTrainConfig:
    def test_defaults(self):
        config = TrainConfig()
        assert (config.beta1, config.beta2, config.eps) == (0.9, 0.999, 1e-8)
        assert config.total_iterations(1000) == 1000

    def test_epochs_budget(self):
        assert TrainConfig(epochs=3, batch_size=128).total_iterations(1000) == 24

    @pytest.mark.parametrize(
        "fields",
        [
            {"batch_size": 0},
            {"beta1": 1.0},
            {"beta2": 0.0},
            {"learning_rate": -0.1},
            {"iterations": 10, "epochs": 1},
            {"loss": "hinge"},
        ],
    )
    def test_invalid(self, fields):
        with pytest.raises(ValidationError):
            TrainConfig(**fields)


class TestTrain:
    @pytest.fixture(scope="class")
    def small_bs(self):
        return generate_dataset("bs", [(2, 3), (3, 3)], 60, 0.5, seed=1)

    def test_records_and_report(self, small_bs):
        config = TrainConfig(dim=2, batch_size=8, iterations=20, log_every=5, seed=3)
        report = train(config, small_bs, {"test": small_bs})
        assert [record.iteration for record in report.records] == [5, 10, 15, 20]
        frame = report.to_frame()
        assert list(frame.columns) == ["iteration", "train_loss", "test_loss", "test_accuracy"]
        csv = report.to_csv({"preset": "unit"})
        assert csv.startswith("# preset: unit\niteration,train_loss,test_loss,test_accuracy\n")

    def test_is_reproducible(self, small_bs):
        config = TrainConfig(dim=2, batch_size=8, iterations=10, log_every=2, seed=4)
        first = train(config, small_bs, {"test": small_bs})
        second = train(config, small_bs, {"test": small_bs})
        assert first.to_csv() == second.to_csv()
        assert first.model == second.model

    def test_zero_learning_rate_keeps_initial_model(self, small_bs):
        frozen = TrainConfig(dim=2, batch_size=8, iterations=0, learning_rate=0.0, seed=5)
        moved = frozen.model_copy(update={"iterations": 15})
        assert train(moved, small_bs).model == train(frozen, small_bs).model

    def test_loss_decreases(self, small_bs):
        config = TrainConfig(dim=2, batch_size=60, iterations=60, log_every=1, learning_rate=0.05, init_std=0.4, seed=0)
        report = train(config, small_bs, {"train": small_bs})
        losses = [record.evaluations["train"].loss for record in report.records]
        assert losses[-1] < losses[0]

    def test_epoch_sampling_with_cross_entropy(self):
        dataset = generate_dataset("sb", [(2, 4)], 40, 0.5, seed=2)
        config = TrainConfig(
            dim=2, batch_size=16, epochs=2, loss="ce", clip_norm=1.0, sampling="epoch", log_every=1, seed=1
        )
        report = train(config, dataset)
        assert [record.iteration for record in report.records] == list(range(1, 7))

    def test_cross_entropy_needs_class_labels(self, small_bs):
        with pytest.raises(LabelDomainError):
            train(TrainConfig(dim=2, loss="ce", iterations=1), small_bs)

    def test_non_finite_loss_aborts(self, small_bs):
        config = TrainConfig(dim=2, init_std=1e80, batch_size=8, iterations=5, seed=0)
        with pytest.raises(NonFiniteLossError) as info:
            train(config, small_bs)
        assert info.value.report is not None
        assert info.value.report.records == []

    def test_accuracy_agrees_with_classifiers(self, small_bs):
        config = TrainConfig(dim=2, batch_size=30, iterations=30, learning_rate=0.05, seed=2)
        model = train(config, small_bs).model
        predictions = np.array([classify_regression(model, picture) for picture in small_bs.pictures()])
        expected = np.mean(predictions == (small_bs.labels() > 0))
        assert evaluate_dataset(model, small_bs).accuracy == pytest.approx(expected)
