"""
Losses, Adam and the mini-batch training loop for GWMs on labeled pictures.
"""

import io
import math
from typing import Callable, Iterator, Literal, Mapping, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gwm_pictures.errors import LabelDomainError, NonFiniteLossError
from gwm_pictures.gwm import evaluate, evaluate_batch, random_init, value_and_grad
from gwm_pictures.structs.dataset import Dataset, LabeledExample
from gwm_pictures.structs.model import GradientAccumulator, GwmModel
from gwm_pictures.structs.picture import Picture

LossKind = Literal["mse", "ce"]

DEFAULT_ITERATIONS = 1000


class AdamSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(0.001, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)


class TrainConfig(BaseModel):
    """
    Everything that determines a training run besides the data.

    At most one of ``iterations`` and ``epochs`` may be set; with neither the
    run lasts DEFAULT_ITERATIONS mini-batches.
    """

    model_config = ConfigDict(frozen=True)

    dim: int = Field(6, gt=0)
    init_std: float = Field(0.4, gt=0)
    learning_rate: float = Field(0.01, ge=0)
    batch_size: int = Field(100, ge=1)
    iterations: Optional[int] = Field(None, ge=0)
    epochs: Optional[int] = Field(None, ge=0)
    loss: LossKind = "mse"
    clip_norm: Optional[float] = Field(None, gt=0)
    seed: int = 0
    beta1: float = Field(0.9, gt=0, lt=1)
    beta2: float = Field(0.999, gt=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    sampling: Literal["replacement", "epoch"] = "replacement"
    log_every: int = Field(100, ge=1)
    threshold: float = 0.5

    @model_validator(mode="after")
    def _one_budget(self) -> "TrainConfig":
        if self.iterations is not None and self.epochs is not None:
            raise ValueError("give either iterations or epochs, not both")
        return self

    def adam(self) -> AdamSettings:
        return AdamSettings(
            learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2, eps=self.eps
        )

    def total_iterations(self, examples: int) -> int:
        if self.epochs is not None:
            return self.epochs * math.ceil(examples / self.batch_size)
        return DEFAULT_ITERATIONS if self.iterations is None else self.iterations


class AdamState(BaseModel):
    """Step counter and the running first and second moments, keyed like model parameters."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    step: int = 0
    first: dict[str, np.ndarray] = Field(default_factory=dict)
    second: dict[str, np.ndarray] = Field(default_factory=dict)


def adam_step(
    model: GwmModel, grads: GradientAccumulator, state: AdamState, settings: AdamSettings
) -> tuple[GwmModel, AdamState]:
    """One bias-corrected Adam update; returns the new model and state, inputs are untouched."""
    step = state.step + 1
    bc1 = 1.0 - settings.beta1**step
    bc2 = 1.0 - settings.beta2**step
    step_size = settings.learning_rate / bc1

    params = model.parameters()
    updated: dict[str, np.ndarray] = {}
    first: dict[str, np.ndarray] = {}
    second: dict[str, np.ndarray] = {}
    for key, g in grads.items():
        m = settings.beta1 * state.first.get(key, 0.0) + (1.0 - settings.beta1) * g
        v = settings.beta2 * state.second.get(key, 0.0) + (1.0 - settings.beta2) * (g * g)
        denom = np.sqrt(v / bc2) + settings.eps
        updated[key] = params[key] - step_size * m / denom
        first[key], second[key] = m, v
    return model.with_parameters(updated), AdamState(step=step, first=first, second=second)


def clip_gradients(grads: GradientAccumulator, threshold: float) -> GradientAccumulator:
    """Rescale to global L2 norm ``threshold`` when the norm exceeds it, else return as is."""
    if not threshold > 0:
        raise ValueError(f"clip threshold must be positive, got {threshold}")
    norm = grads.global_norm()
    if norm <= threshold:
        return grads
    logger.debug(f"Clipping gradient norm {norm:.4g} to {threshold}")
    return grads.scaled(threshold / norm)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -np.asarray(x, dtype=np.float64)))


def _unpack(batch: Sequence[LabeledExample]) -> tuple[list[Picture], np.ndarray]:
    if not batch:
        raise ValueError("cannot compute a loss on an empty batch")
    return [example.picture for example in batch], np.array([example.label for example in batch])


def _check_binary(labels: np.ndarray) -> None:
    bad = labels[(labels != 0.0) & (labels != 1.0)]
    if bad.size:
        raise LabelDomainError(f"cross entropy needs labels in {{0, 1}}, got {bad[0]}")


def mse_loss(model: GwmModel, batch: Sequence[LabeledExample]) -> tuple[float, GradientAccumulator]:
    pictures, labels = _unpack(batch)
    scale = 2.0 / len(labels)
    values, grads = value_and_grad(
        model, pictures, lambda chunk, indices: scale * (chunk - labels[indices])
    )
    return float(np.mean((values - labels) ** 2)), grads


def ce_loss(model: GwmModel, batch: Sequence[LabeledExample]) -> tuple[float, GradientAccumulator]:
    """Mean sigmoid cross entropy; dJ/df = sigmoid(f) - y per example."""
    pictures, labels = _unpack(batch)
    _check_binary(labels)
    scale = 1.0 / len(labels)
    values, grads = value_and_grad(
        model, pictures, lambda chunk, indices: scale * (sigmoid(chunk) - labels[indices])
    )
    return float(np.mean(np.logaddexp(0.0, values) - labels * values)), grads


LOSSES: dict[str, Callable[[GwmModel, Sequence[LabeledExample]], tuple[float, GradientAccumulator]]] = {
    "mse": mse_loss,
    "ce": ce_loss,
}


def classify_regression(model: GwmModel, picture: Picture, threshold: float = 0.5) -> bool:
    return evaluate(model, picture) > threshold


def classify_sigmoid(model: GwmModel, picture: Picture) -> bool:
    # sigmoid(f) >= 0.5 exactly when f >= 0
    return evaluate(model, picture) >= 0.0


def predict(values: np.ndarray, loss: LossKind, threshold: float = 0.5) -> np.ndarray:
    if loss == "ce":
        return values >= 0.0
    return values > threshold


class EvalMetrics(NamedTuple):
    loss: float
    accuracy: float


def evaluate_dataset(
    model: GwmModel, dataset: Dataset, loss: LossKind = "mse", threshold: float = 0.5
) -> EvalMetrics:
    """Loss and accuracy over a whole dataset; a label > 0 is the positive class."""
    values = evaluate_batch(model, dataset.pictures())
    labels = dataset.labels()
    if loss == "ce":
        _check_binary(labels)
        value = np.mean(np.logaddexp(0.0, values) - labels * values)
    else:
        value = np.mean((values - labels) ** 2)
    accuracy = np.mean(predict(values, loss, threshold) == (labels > 0))
    return EvalMetrics(loss=float(value), accuracy=float(accuracy))


class TrainRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    iteration: int
    train_loss: float
    evaluations: dict[str, EvalMetrics] = Field(default_factory=dict)


class TrainReport(BaseModel):
    records: list[TrainRecord]
    model: GwmModel
    config: TrainConfig

    @model_validator(mode="after")
    def _ordered(self) -> "TrainReport":
        iterations = [record.iteration for record in self.records]
        if iterations != sorted(set(iterations)):
            raise ValueError("records must be strictly ordered by iteration")
        return self

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for record in self.records:
            row = {"iteration": record.iteration, "train_loss": record.train_loss}
            for name, metrics in record.evaluations.items():
                row[f"{name}_loss"] = metrics.loss
                row[f"{name}_accuracy"] = metrics.accuracy
            rows.append(row)
        columns = ["iteration", "train_loss"]
        if self.records:
            for name in self.records[0].evaluations:
                columns += [f"{name}_loss", f"{name}_accuracy"]
        return pd.DataFrame(rows, columns=columns)

    def to_csv(self, header: Optional[Mapping[str, object]] = None) -> str:
        """CSV of ``to_frame`` preceded by ``# key: value`` provenance lines."""
        buffer = io.StringIO()
        for key, value in (header or {}).items():
            buffer.write(f"# {key}: {value}\n")
        self.to_frame().to_csv(buffer, index=False, float_format="%.10g", lineterminator="\n")
        return buffer.getvalue()


def _batches(rng: np.random.Generator, size: int, config: TrainConfig) -> Iterator[np.ndarray]:
    batch = min(config.batch_size, size)
    if config.sampling == "replacement":
        while True:
            yield rng.choice(size, size=batch, replace=False)
    while True:
        order = rng.permutation(size)
        for start in range(0, size, config.batch_size):
            yield order[start : start + config.batch_size]


def train(
    config: TrainConfig, train_set: Dataset, eval_sets: Optional[Mapping[str, Dataset]] = None
) -> TrainReport:
    """
    Seeded mini-batch training from a random initial model.

    Each iteration draws a mini-batch (uniformly, or the next slice of a
    shuffled epoch), differentiates the configured loss, optionally clips
    and applies Adam. Every ``log_every`` iterations and at the end the
    batch loss and the metrics on every eval set are recorded.
    """
    if not len(train_set):
        raise ValueError("the training set is empty")
    eval_sets = dict(eval_sets or {})
    if config.loss == "ce":
        _check_binary(train_set.labels())
    loss_fn = LOSSES[config.loss]

    init_seq, batch_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = random_init(
        config.dim, train_set.alphabet, config.init_std, int(init_seq.generate_state(1)[0])
    )
    batches = _batches(np.random.default_rng(batch_seq), len(train_set), config)
    settings = config.adam()
    state = AdamState()
    total = config.total_iterations(len(train_set))
    examples = train_set.examples
    records: list[TrainRecord] = []
    logger.info(
        f"Training d={config.dim} {config.loss} model on {len(train_set)} examples "
        f"for {total} iterations (lr {config.learning_rate}, batch {config.batch_size})"
    )

    for iteration in range(1, total + 1):
        batch = [examples[k] for k in next(batches)]
        loss, grads = loss_fn(model, batch)
        if not math.isfinite(loss):
            logger.error(f"Loss became {loss} at iteration {iteration}; aborting")
            report = TrainReport(records=records, model=model, config=config)
            raise NonFiniteLossError(f"non-finite loss {loss} at iteration {iteration}", report)
        if config.clip_norm is not None:
            grads = clip_gradients(grads, config.clip_norm)
        model, state = adam_step(model, grads, state, settings)

        if iteration % config.log_every == 0 or iteration == total:
            evaluations = {
                name: evaluate_dataset(model, dataset, config.loss, config.threshold)
                for name, dataset in eval_sets.items()
            }
            records.append(
                TrainRecord(iteration=iteration, train_loss=loss, evaluations=evaluations)
            )
            logger.info(
                f"iteration {iteration}: train {loss:.4g}"
                + "".join(
                    f", {name} {metrics.loss:.4g} / {metrics.accuracy:.1%}"
                    for name, metrics in evaluations.items()
                )
            )

    return TrainReport(records=records, model=model, config=config)
