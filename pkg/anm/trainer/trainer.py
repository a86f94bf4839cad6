"""Обучение предобученной модели f_p и downstream-жертв f_d.

Модуль содержит конфигурацию обучения, цикл стохастического
градиентного спуска с моментом и оценку точности.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Literal

import numpy as np

from anm.data.datasets import BatchPlan, Dataset, batches
from anm.errors import NumericalError, ValidationError
from anm.filters.filters import HasLabels, IsNonEmpty, ensure
from anm.netgraph.models import FEATURES_NAME, INPUT_NAME, ModelGraph, extract_features, predict, with_new_head
from anm.tensor import graph as g
from anm.tensor.tape import Tape
from anm.tensor.tensor import OpNode, Tensor

logger = logging.getLogger(__name__)

LABELS_NAME = "labels"
BN_MOMENTUM = 0.1

FreezePolicy = Literal["none", "extractor-frozen"]


@dataclass(frozen=True)
class TrainConfig:
    """Параметры одного эпизода обучения.

    Поля:
        lr (float): шаг обучения, > 0
        epochs (int): число эпох, >= 0
        batch_size (int): размер мини-батча
        momentum (float): коэффициент момента в [0, 1)
        seed (int): сид порядка батчей и инициализации новой головы
        freeze (str): none | extractor-frozen
    """

    lr: float = 1e-2
    epochs: int = 10
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0
    freeze: FreezePolicy = "none"

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValidationError(f"learning rate must be > 0, got {self.lr}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch size must be >= 1, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise ValidationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.freeze not in ("none", "extractor-frozen"):
            raise ValidationError(f"unknown freeze policy {self.freeze!r}")

    def as_dict(self) -> dict:
        return asdict(self)


PRETRAIN_DEFAULTS = TrainConfig()
HEAD_DEFAULTS = TrainConfig(lr=1e-3, epochs=30, batch_size=10, freeze="extractor-frozen")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float


EpochCallback = Callable[[EpochRecord], None]


class _Momentum:
    """SGD с моментом: v ← m·v + g, p ← p − lr·v."""

    def __init__(self, lr: float, momentum: float) -> None:
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, Tensor]) -> None:
        for name, grad in grads.items():
            v = self.velocity.get(name)
            v = grad.data if v is None else self.momentum * v + grad.data
            self.velocity[name] = v
            params[name] = (params[name] - self.lr * v).astype(np.float32)


def _batch_size(config: TrainConfig, n: int) -> int:
    # datasets smaller than the configured batch train in one batch
    return min(config.batch_size, n)


def _run_epochs(
    root: OpNode,
    data: np.ndarray,
    labels: np.ndarray,
    dataset: Dataset,
    data_name: str,
    params: dict[str, np.ndarray],
    fixed: dict[str, np.ndarray],
    config: TrainConfig,
    on_epoch: EpochCallback | None,
    on_batch: Callable[[Tape], None] | None = None,
) -> None:
    labels_node = g.placeholder(LABELS_NAME)
    loss_node = g.softmax_cross_entropy(root, labels_node)
    optimizer = _Momentum(config.lr, config.momentum)
    plan = BatchPlan(_batch_size(config, len(dataset)), config.epochs, config.seed)
    tape = Tape(np.float32)
    totals = {"loss": 0.0, "correct": 0, "seen": 0}
    current = 0

    def close_epoch(epoch: int) -> None:
        record = EpochRecord(
            epoch=epoch,
            loss=totals["loss"] / max(totals["seen"], 1),
            accuracy=totals["correct"] / max(totals["seen"], 1),
        )
        logger.info("Epoch %d: loss=%.4f accuracy=%.4f", record.epoch, record.loss, record.accuracy)
        if on_epoch is not None:
            on_epoch(record)
        totals.update(loss=0.0, correct=0, seen=0)

    for epoch, idx in batches(dataset, plan):
        if epoch != current:
            close_epoch(current)
            current = epoch
        inputs: dict[str, Tensor] = {n: Tensor(a) for n, a in fixed.items()}
        inputs.update({n: Tensor(a, requires_grad=True) for n, a in params.items()})
        inputs[data_name] = Tensor(data[idx])
        inputs[LABELS_NAME] = Tensor(labels[idx])
        loss = tape.evaluate(loss_node, inputs).item()
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite training loss at epoch {epoch}")
        logits = tape.value(root)
        totals["loss"] += loss * len(idx)
        totals["correct"] += int((logits.argmax(axis=1) == labels[idx]).sum())
        totals["seen"] += len(idx)
        logger.debug("Epoch %d batch of %d: loss=%.5f", epoch, len(idx), loss)
        optimizer.step(params, tape.gradient_wrt_params(loss_node))
        if on_batch is not None:
            on_batch(tape)
    if config.epochs:
        close_epoch(current)


def pretrain(
    model: ModelGraph,
    dataset: Dataset,
    config: TrainConfig = PRETRAIN_DEFAULTS,
    on_epoch: EpochCallback | None = None,
) -> ModelGraph:
    """Полное обучение модели на размеченной pretext-задаче.

    Параметры:
        model (ModelGraph): инициализированная модель
        dataset (Dataset): размеченный набор данных
        config (TrainConfig): политика заморозки должна быть none
        on_epoch (Callable): вызывается с EpochRecord в конце каждой эпохи

    Возвращает:
        ModelGraph: обученная модель f_p с финальной статистикой batchnorm

    Примечания:
        - Бегущие среднее и дисперсия batchnorm обновляются с моментом 0.1
        - При epochs = 0 возвращаются исходные параметры
    """
    ensure(HasLabels(), dataset)
    ensure(IsNonEmpty(), dataset)
    if config.freeze != "none":
        raise ValidationError("pretrain requires freeze policy 'none'")
    if dataset.num_classes != model.num_classes:
        raise ValidationError(
            f"model has {model.num_classes} outputs but dataset has {dataset.num_classes} classes"
        )
    names = set(model.param_names) - model.frozen
    params = {n: a.copy() for n, a in model.arrays.items() if n in names}
    fixed = {n: a.copy() for n, a in model.arrays.items() if n not in names}

    def update_running_stats(tape: Tape) -> None:
        for prefix, (mean, var) in tape.batch_statistics().items():
            for key, batch_value in (("running_mean", mean), ("running_var", var)):
                name = f"{prefix}.{key}"
                fixed[name] = ((1 - BN_MOMENTUM) * fixed[name] + BN_MOMENTUM * batch_value).astype(np.float32)

    logger.info(
        "Pretraining %s on %s (%d samples, %d epochs, lr=%g)",
        model.arch, dataset.dataset_id, len(dataset), config.epochs, config.lr,
    )
    _run_epochs(
        model.full_graph(training=True),
        dataset.images,
        dataset.labels,
        dataset,
        INPUT_NAME,
        params,
        fixed,
        config,
        on_epoch,
        on_batch=update_running_stats,
    )
    return model.with_arrays({**params, **fixed})


def finetune_head(
    pretrained: ModelGraph,
    downstream: Dataset,
    config: TrainConfig = HEAD_DEFAULTS,
    on_epoch: EpochCallback | None = None,
) -> ModelGraph:
    """Обучает новую голову поверх замороженного экстрактора.

    Параметры:
        pretrained (ModelGraph): предобученная модель f_p
        downstream (Dataset): размеченный downstream-набор
        config (TrainConfig): политика заморозки должна быть extractor-frozen
        on_epoch (Callable): вызывается с EpochRecord в конце каждой эпохи

    Возвращает:
        ModelGraph: модель f_d, экстрактор которой побитово совпадает с f_p

    Примечания:
        - Голова пересоздаётся под число классов downstream-набора
        - Признаки экстрактора вычисляются один раз в режиме inference
    """
    ensure(HasLabels(), downstream)
    ensure(IsNonEmpty(), downstream)
    if config.freeze != "extractor-frozen":
        raise ValidationError("finetune_head requires freeze policy 'extractor-frozen'")
    model = with_new_head(pretrained.freeze_extractor(), downstream.num_classes, config.seed)
    before = model.extractor_checksum()

    features = extract_features(model, downstream.images)
    head = set(model.head_names)
    params = {n: a.copy() for n, a in model.arrays.items() if n in head}
    logger.info(
        "Fine-tuning %s head on %s (%d classes, %d epochs, lr=%g)",
        model.arch, downstream.dataset_id, downstream.num_classes, config.epochs, config.lr,
    )
    _run_epochs(
        model.head_graph(),
        features,
        downstream.labels,
        downstream,
        FEATURES_NAME,
        params,
        {},
        config,
        on_epoch,
    )
    tuned = model.with_arrays(params)
    if tuned.extractor_checksum() != before:
        raise NumericalError("extractor changed during head fine-tuning")
    return tuned


def evaluate_accuracy(model: ModelGraph, dataset: Dataset) -> float:
    """Доля верных argmax-предсказаний на размеченном наборе.

    Примечания:
        - Пустой набор данных является ошибкой, а не нулевой точностью
    """
    ensure(HasLabels(), dataset)
    ensure(IsNonEmpty(), dataset)
    preds = predict(model, dataset.images)
    return float(np.mean(preds == dataset.labels))
