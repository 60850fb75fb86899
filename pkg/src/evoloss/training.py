"""The fitness oracle: SGD training of the softmax MLP under an arbitrary
expression loss, with failure detection.

The evolved tree is the per-class body f(x_i, y_i); the full loss is the
fixed reduction L = -(1/n) * sum_i f(x_i, y_i), averaged over the batch.
Softmax outputs are clipped into [clip_epsilon, 1 - clip_epsilon] before the
body or its derivative sees them, which keeps pole-bearing bodies finite.

Backpropagation composes the symbolic derivative of the body with the
softmax Jacobian:

    dL/dz_j = -(1/n) * y_j * (g_j - sum_i y_i g_i),   g_i = df/dy(x_i, y_i)

where the clip contributes a zero factor wherever it is active, so the
analytic gradient matches finite differences of the computed loss
everywhere.
"""

from __future__ import annotations

import csv as _csv
import enum
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coefficients import CoeffExpr
from .datasets import (
    DatasetSplit,
    load_csv,
    load_idx,
    split as split_dataset,
    subsample_portion,
    synth_blobs,
    synth_digits,
)
from .expressions import (
    Expr,
    INVALID,
    contains_required_leaves,
    differentiate_y,
    evaluate,
    evaluate_array,
)
from .losses import as_body_expression
from .network import (
    ModelConfig,
    TrainedModel,
    backward,
    forward_train,
    init_model,
    sgd_step,
    softmax,
)
from .seeding import derive_seed


@dataclass
class TrainConfig:
    batch_size: int = 100
    learning_rate: float = 0.01
    steps: int = 2_000
    eval_every: int | None = None  # default: steps // 80, at least 1
    clip_epsilon: float = 1e-7
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.steps < 1:
            raise ValueError("batch_size and steps must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.clip_epsilon <= 0.01:
            raise ValueError("clip_epsilon must be in (0, 0.01]")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError("eval_every must be positive")

    @property
    def resolved_eval_every(self) -> int:
        return self.eval_every if self.eval_every is not None else max(1, self.steps // 80)


class FailureKind(str, enum.Enum):
    NONE = "none"
    NAN_DETECTED = "nan_detected"
    MISSING_LEAF_GATE = "missing_leaf_gate"
    EVAL_INVALID = "eval_invalid"
    WORKER_ERROR = "worker_error"


@dataclass
class FitnessReport:
    fitness: float
    failure: FailureKind = FailureKind.NONE
    steps_completed: int = 0
    wall_time: float = 0.0
    final_train_loss: float = float("nan")
    error: str | None = None

    def __post_init__(self) -> None:
        if self.failure is not FailureKind.NONE and self.fitness != 0.0:
            raise ValueError("failed evaluations must report fitness 0")


@dataclass
class TrainingCurve:
    """(step, train_loss, val_accuracy) checkpoints."""

    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def value_at(self, step: int, column: int = 2) -> float:
        for row in self.rows:
            if row[0] == step:
                return row[column]
        raise KeyError(f"no checkpoint at step {step}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["step", "train_loss", "val_accuracy"])
            for step, loss, acc in self.rows:
                writer.writerow([step, repr(loss), repr(acc)])


class CompiledLoss:
    """A body tree paired with its symbolic y-derivative for batched use."""

    def __init__(self, body: Expr):
        self.body = body
        self.dbody = differentiate_y(body)

    def values(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return evaluate_array(self.body, x, y)

    def grads(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return evaluate_array(self.dbody, x, y)


def aggregate_loss(
    body: Expr | CoeffExpr | str,
    x_vec: Sequence[float],
    y_vec: Sequence[float],
    clip_epsilon: float = 1e-7,
):
    """Scalar reference reduction: L = -(1/n) sum_i f(x_i, clip(y_i)).

    Returns INVALID if any per-class term is invalid.
    """
    body = as_body_expression(body)
    x_vec = np.asarray(x_vec, dtype=float)
    y_vec = np.clip(np.asarray(y_vec, dtype=float), clip_epsilon, 1.0 - clip_epsilon)
    if x_vec.shape != y_vec.shape:
        raise ValueError("x and y vectors must have matching length")
    total = 0.0
    for xi, yi in zip(x_vec, y_vec):
        term = evaluate(body, float(xi), float(yi))
        if term is INVALID:
            return INVALID
        total += term
    return -total / len(x_vec)


def loss_and_logit_gradient(
    loss: CompiledLoss,
    x_onehot: np.ndarray,
    logits: np.ndarray,
    clip_epsilon: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Batch-mean loss, its exact logit gradient, and the per-class body
    values (for invalid-expression detection)."""
    y = softmax(logits)
    yc = np.clip(y, clip_epsilon, 1.0 - clip_epsilon)
    n = x_onehot.shape[1]
    batch = x_onehot.shape[0]
    values = loss.values(x_onehot, yc)
    loss_val = float(-(values.sum(axis=1) / n).mean())
    g = loss.grads(x_onehot, yc)
    # derivative of the clip is zero where it is active
    g = np.where((y > clip_epsilon) & (y < 1.0 - clip_epsilon), g, 0.0)
    inner = (y * g).sum(axis=1, keepdims=True)
    grad = -(y * g - y * inner) / (n * batch)
    return loss_val, grad, values


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def train(
    model_cfg: ModelConfig,
    data: DatasetSplit,
    loss: "Expr | CoeffExpr | str | CompiledLoss",
    cfg: TrainConfig,
) -> tuple[TrainedModel, FitnessReport, TrainingCurve]:
    """Minibatch SGD for ``cfg.steps`` steps.

    Aborts with fitness 0 on the first invalid expression value
    (EVAL_INVALID) or non-finite loss/gradient (NAN_DETECTED). The report's
    fitness is the final validation accuracy.
    """
    if data.input_dim != model_cfg.input_dim:
        raise ValueError(
            f"data has {data.input_dim} features but the model expects {model_cfg.input_dim}"
        )
    if data.num_classes != model_cfg.num_classes:
        raise ValueError(
            f"data has {data.num_classes} classes but the model expects {model_cfg.num_classes}"
        )
    compiled = loss if isinstance(loss, CompiledLoss) else CompiledLoss(as_body_expression(loss))

    started = time.perf_counter()
    model = init_model(model_cfg)
    rng = np.random.default_rng(cfg.rng_seed)
    curve = TrainingCurve()
    eval_every = cfg.resolved_eval_every
    n_train = len(data.train_y)
    train_onehot_cache: dict[int, np.ndarray] = {}
    last_loss = float("nan")

    def fail(kind: FailureKind, step: int) -> tuple[TrainedModel, FitnessReport, TrainingCurve]:
        report = FitnessReport(
            fitness=0.0,
            failure=kind,
            steps_completed=step,
            wall_time=time.perf_counter() - started,
            final_train_loss=last_loss,
        )
        return model, report, curve

    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, n_train, size=cfg.batch_size)
        xb = data.train_x[idx]
        yb = data.train_y[idx]
        # divergence is detected explicitly below, so numpy warnings are noise
        with np.errstate(all="ignore"):
            logits, caches = forward_train(model, xb, model_cfg.dropout, rng)
            if not np.all(np.isfinite(logits)):
                # the network itself diverged; distinct from expression-domain
                # violations, which surface in the per-class values below
                return fail(FailureKind.NAN_DETECTED, step)
            onehot = _one_hot(yb, model_cfg.num_classes)
            loss_val, grad_logits, values = loss_and_logit_gradient(
                compiled, onehot, logits, cfg.clip_epsilon
            )
            if not np.all(np.isfinite(values)):
                return fail(FailureKind.EVAL_INVALID, step)
            if not np.isfinite(loss_val) or not np.all(np.isfinite(grad_logits)):
                return fail(FailureKind.NAN_DETECTED, step)
            last_loss = loss_val
            grads_w, grads_b = backward(model, caches, grad_logits)
            if any(not np.all(np.isfinite(g)) for g in grads_w):
                return fail(FailureKind.NAN_DETECTED, step)
            sgd_step(model, grads_w, grads_b, cfg.learning_rate)
            if any(not np.all(np.isfinite(w)) for w in model.weights):
                return fail(FailureKind.NAN_DETECTED, step)
            if step % eval_every == 0 or step == cfg.steps:
                curve.rows.append((step, loss_val, model.accuracy(data.val_x, data.val_y)))

    report = FitnessReport(
        fitness=model.accuracy(data.val_x, data.val_y),
        failure=FailureKind.NONE,
        steps_completed=cfg.steps,
        wall_time=time.perf_counter() - started,
        final_train_loss=last_loss,
    )
    return model, report, curve


# ---------------------------------------------------------------------------
# Fitness tasks


@dataclass
class FitnessTask:
    """Everything one fitness evaluation needs: model shape, data, budget."""

    model: ModelConfig
    data: DatasetSplit
    train: TrainConfig


def fitness_of(
    expr: "Expr | CoeffExpr | str",
    task: FitnessTask,
    seed: int | None = None,
) -> FitnessReport:
    """Gate on required leaves, then train and score on validation data.

    ``seed`` overrides both the weight-init and SGD streams so fitness is a
    pure function of (expression, task, seed).
    """
    body = as_body_expression(expr)
    if not contains_required_leaves(body):
        return FitnessReport(fitness=0.0, failure=FailureKind.MISSING_LEAF_GATE)
    model_cfg = task.model
    train_cfg = task.train
    if seed is not None:
        model_cfg = ModelConfig(
            input_dim=model_cfg.input_dim,
            num_classes=model_cfg.num_classes,
            hidden_layers=model_cfg.hidden_layers,
            dropout=model_cfg.dropout,
            weight_init_seed=derive_seed(seed, "init"),
        )
        train_cfg = TrainConfig(
            batch_size=train_cfg.batch_size,
            learning_rate=train_cfg.learning_rate,
            steps=train_cfg.steps,
            eval_every=train_cfg.eval_every,
            clip_epsilon=train_cfg.clip_epsilon,
            rng_seed=derive_seed(seed, "sgd"),
        )
    _, report, _ = train(model_cfg, task.data, body, train_cfg)
    return report


# Descriptors rebuild a task deterministically inside worker processes, so
# jobs ship a few numbers instead of the dataset arrays.


@dataclass(frozen=True)
class BlobsSource:
    classes: int = 4
    samples_per_class: int = 400
    dim: int = 16
    separation: float = 0.8
    noise_sigma: float = 0.15
    seed: int = 0
    kind: str = "blobs"


@dataclass(frozen=True)
class DigitsSource:
    samples: int = 4_000
    image_size: int = 28
    noise_sigma: float = 0.25
    pixel_dropout: float = 0.2
    seed: int = 0
    kind: str = "digits"


@dataclass(frozen=True)
class IdxSource:
    images: str = ""
    labels: str = ""
    kind: str = "idx"


@dataclass(frozen=True)
class CsvSource:
    path: str = ""
    kind: str = "csv"


DataSource = BlobsSource | DigitsSource | IdxSource | CsvSource


def load_source(source: DataSource) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(source, BlobsSource):
        return synth_blobs(
            source.classes,
            source.samples_per_class,
            source.dim,
            source.separation,
            source.noise_sigma,
            source.seed,
        )
    if isinstance(source, DigitsSource):
        return synth_digits(
            source.samples,
            source.seed,
            image_size=source.image_size,
            noise_sigma=source.noise_sigma,
            pixel_dropout=source.pixel_dropout,
        )
    if isinstance(source, IdxSource):
        return load_idx(source.images, source.labels)
    if isinstance(source, CsvSource):
        return load_csv(source.path)
    raise TypeError(f"unknown data source {source!r}")


@dataclass(frozen=True)
class TaskDescriptor:
    """Hashable recipe for a :class:`FitnessTask`."""

    source: DataSource
    train_n: int
    val_n: int
    test_n: int
    split_seed: int = 0
    portion: float = 1.0
    portion_seed: int = 0
    hidden_layers: tuple[int, ...] = (128,)
    dropout: float = 0.4
    batch_size: int = 100
    learning_rate: float = 0.01
    steps: int = 2_000
    eval_every: int | None = None
    clip_epsilon: float = 1e-7


_TASK_CACHE: dict[TaskDescriptor, FitnessTask] = {}


def build_task(desc: TaskDescriptor) -> FitnessTask:
    """Materialize (and per-process cache) the task a descriptor names."""
    task = _TASK_CACHE.get(desc)
    if task is not None:
        return task
    features, labels = load_source(desc.source)
    ds = split_dataset(features, labels, desc.train_n, desc.val_n, desc.test_n, desc.split_seed)
    if desc.portion != 1.0:
        ds = subsample_portion(ds, desc.portion, desc.portion_seed)
    task = FitnessTask(
        model=ModelConfig(
            input_dim=ds.input_dim,
            num_classes=ds.num_classes,
            hidden_layers=desc.hidden_layers,
            dropout=desc.dropout,
        ),
        data=ds,
        train=TrainConfig(
            batch_size=desc.batch_size,
            learning_rate=desc.learning_rate,
            steps=desc.steps,
            eval_every=desc.eval_every,
            clip_epsilon=desc.clip_epsilon,
        ),
    )
    _TASK_CACHE[desc] = task
    return task
