"""Neuron-manipulation attacks: target values, step schedule and the PGD loop.

All three attacks share one loop. A single universal δ starts at zero and
is updated on every mini-batch of the generation set:

    δ ← project_linf(δ − η(e) · ∇_δ loss, ε)

where the loss is the mean over the batch and over the target neurons of
(t_i − φ_i(clamp(x + δ, 0, 1)))².
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from anm.attack.perturbation import Perturbation, project_linf
from anm.data.datasets import BatchPlan, Dataset, batches
from anm.errors import NumericalError, ShapeError, ValidationError
from anm.filters.filters import IsRole, ensure
from anm.netgraph.models import INPUT_NAME, ModelGraph, check_neurons
from anm.neuronlab.selection import NeuronSet
from anm.neuronlab.stats import NeuronStats
from anm.tensor import graph as g
from anm.tensor.tape import Tape
from anm.tensor.tensor import OpNode, Tensor

logger = logging.getLogger(__name__)

DELTA_NAME = "delta"
TARGETS_NAME = "targets"
TARGET_KINDS = ("sigma-multiple", "direct")

StepCallback = Callable[[int, np.ndarray], None]


@dataclass(frozen=True)
class TargetPolicy:
    """sigma-multiple: t = μ + k·σ; direct: t = value."""

    kind: str = "sigma-multiple"
    k: float = 10.0
    value: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in TARGET_KINDS:
            raise ValidationError(f"unknown target policy {self.kind!r}; known: {', '.join(TARGET_KINDS)}")
        if self.kind == "direct" and (self.value is None or not np.isfinite(self.value)):
            raise ValidationError("direct target policy needs a finite value")


@dataclass(frozen=True)
class AttackConfig:
    """Бюджет, расписание шага и политика целевых значений атаки.

    Поля:
        epsilon (float): ℓ∞-бюджет в единицах пикселя (16/255)
        step0 (float | None): начальный шаг η_0, по умолчанию 4ε
        n_drop (int): через сколько эпох шаг уменьшается вдвое
        epochs (int): число эпох N
        batch_size (int): размер мини-батча B
        target (TargetPolicy): политика целевых значений
        k_neurons (int): K для атак на набор нейронов
        seed (int): сид порядка батчей и случайного выбора нейронов
    """

    epsilon: float = 16 / 255
    step0: float | None = None
    n_drop: int = 2
    epochs: int = 10
    batch_size: int = 10
    target: TargetPolicy = field(default_factory=TargetPolicy)
    k_neurons: int = 12
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.step0 is None:
            object.__setattr__(self, "step0", 4 * self.epsilon)
        if not self.step0 > 0:
            raise ValidationError(f"initial step must be > 0, got {self.step0}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.n_drop < 1:
            raise ValidationError(f"n_drop must be >= 1, got {self.n_drop}")
        if self.batch_size < 1:
            raise ValidationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.k_neurons < 1:
            raise ValidationError(f"K must be >= 1, got {self.k_neurons}")

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AttackConfig":
        data = dict(data)
        data["target"] = TargetPolicy(**data.get("target", {}))
        return cls(**data)


def target_value(stats: NeuronStats, neuron: int, policy: TargetPolicy) -> float:
    if not 0 <= neuron < stats.d:
        raise ValidationError(f"neuron {neuron} out of range [0, {stats.d})")
    if policy.kind == "direct":
        return float(policy.value)
    sigma = float(stats.std[neuron])
    if not np.isfinite(sigma):
        raise NumericalError(f"σ of neuron {neuron} is not finite")
    return float(stats.mean[neuron]) + policy.k * sigma


def step_size(epoch: int, config: AttackConfig) -> float:
    """η = η_0 · 2^(−⌊e / N_drop⌋)."""
    if not 0 <= epoch < config.epochs:
        raise ValidationError(f"epoch {epoch} outside 0..{config.epochs - 1}")
    return config.step0 * 2.0 ** -(epoch // config.n_drop)


class _LossGraph:
    """Symbolic attack loss over a fixed model and target set."""

    def __init__(self, model: ModelGraph, neurons: Sequence[int]) -> None:
        self.model = model
        self.neurons = check_neurons(model, neurons)
        adversarial = g.clamp(g.add(g.placeholder(INPUT_NAME), g.placeholder(DELTA_NAME)), 0.0, 1.0)
        selected = g.index_select(model.extractor_graph(source=adversarial), self.neurons)
        self.loss: OpNode = g.mean_reduce(g.squared_error(selected, g.placeholder(TARGETS_NAME)))
        self.params = model.bindings()
        self.tape = Tape(np.float32)

    def evaluate(self, images: np.ndarray, delta: np.ndarray, targets: np.ndarray) -> float:
        if delta.shape != self.model.input_shape or images.shape[1:] != delta.shape:
            raise ShapeError("anm-loss", [delta.shape, images.shape], "perturbation and image shapes differ")
        inputs = dict(self.params)
        inputs[INPUT_NAME] = Tensor(images)
        inputs[DELTA_NAME] = Tensor(delta, requires_grad=True)
        inputs[TARGETS_NAME] = Tensor(targets)
        return self.tape.evaluate(self.loss, inputs).item()

    def gradient(self) -> np.ndarray:
        return self.tape.gradient_wrt_input(self.loss, DELTA_NAME).data


def anm_loss(
    model: ModelGraph,
    batch: np.ndarray,
    neurons: Sequence[int],
    targets: Sequence[float],
    delta: np.ndarray,
) -> float:
    """Mean of (t_i − φ_i(clamp(x + δ)))² over the batch and the target neurons."""
    targets = np.asarray(targets, dtype=np.float32)
    if targets.shape != (len(tuple(neurons)),):
        raise ValidationError(f"{len(tuple(neurons))} neurons but {targets.shape} targets")
    return _LossGraph(model, neurons).evaluate(
        np.asarray(batch, dtype=np.float32), np.asarray(delta, dtype=np.float32), targets
    )


def _run_pgd(
    model: ModelGraph,
    generation: Dataset,
    neurons: NeuronSet,
    stats: NeuronStats,
    config: AttackConfig,
    method: str,
    on_step: StepCallback | None,
) -> Perturbation:
    ensure(IsRole("generation"), generation)
    if stats.d != model.feature_dim:
        raise ValidationError(f"statistics cover {stats.d} neurons, model has {model.feature_dim}")
    targets = np.array([target_value(stats, j, config.target) for j in neurons.indices], dtype=np.float32)
    objective = _LossGraph(model, neurons.indices)
    delta = np.zeros(model.input_shape, dtype=np.float32)
    plan = BatchPlan(min(config.batch_size, len(generation)), config.epochs, config.seed)

    logger.info(
        "Running %s on %s: neurons=%s eps=%.5f epochs=%d",
        method, model.model_id, list(neurons.indices), config.epsilon, config.epochs,
    )
    epoch_losses: list[float] = []
    running, count, current = 0.0, 0, 0
    for epoch, idx in batches(generation, plan):
        if epoch != current:
            epoch_losses.append(running / count)
            logger.info("%s epoch %d: mean loss %.5f", method, current, epoch_losses[-1])
            running, count, current = 0.0, 0, epoch
        loss = objective.evaluate(generation.images[idx], delta, targets)
        if not np.isfinite(loss):
            raise NumericalError(f"{method}: non-finite loss at epoch {epoch} (neurons {list(neurons.indices)})")
        grad = objective.gradient()
        delta = project_linf(delta - np.float32(step_size(epoch, config)) * grad, config.epsilon)
        if on_step is not None:
            on_step(epoch, delta)
        running += loss * len(idx)
        count += len(idx)
    epoch_losses.append(running / count)
    logger.info("%s epoch %d: mean loss %.5f", method, current, epoch_losses[-1])

    provenance = {
        "method": method,
        "model_id": model.model_id,
        "neurons": list(neurons.indices),
        "gains": list(neurons.gains),
        "targets": [float(t) for t in targets],
        "config": config.as_dict(),
        "epsilon": config.epsilon,
        "seed": config.seed,
        "dataset_checksum": generation.checksum,
        "final_loss": epoch_losses[-1],
        "epoch_losses": epoch_losses,
    }
    return Perturbation(delta, config.epsilon, provenance)


def anm_s(
    model: ModelGraph,
    generation: Dataset,
    neuron: int,
    stats: NeuronStats,
    config: AttackConfig,
    on_step: StepCallback | None = None,
) -> Perturbation:
    """Single-neuron attack."""
    return _run_pgd(model, generation, NeuronSet((int(neuron),)), stats, config, "anm-s", on_step)


def anm_m(
    model: ModelGraph,
    generation: Dataset,
    neurons: NeuronSet,
    stats: NeuronStats,
    config: AttackConfig,
    on_step: StepCallback | None = None,
) -> Perturbation:
    """Multi-neuron attack on a selected set (usually from ``mims_select``)."""
    return _run_pgd(model, generation, neurons, stats, config, "anm-m", on_step)


def random_neurons(d: int, k: int, seed: int) -> NeuronSet:
    if not 1 <= k <= d:
        raise ValidationError(f"K must lie in 1..{d}, got {k}")
    chosen = np.random.default_rng(seed).choice(d, size=k, replace=False)
    return NeuronSet(tuple(int(j) for j in chosen))


def anm_random(
    model: ModelGraph,
    generation: Dataset,
    k: int,
    stats: NeuronStats,
    config: AttackConfig,
    on_step: StepCallback | None = None,
) -> Perturbation:
    """Multi-neuron attack on K distinct neurons drawn with the config seed."""
    neurons = random_neurons(model.feature_dim, k, config.seed)
    return _run_pgd(model, generation, neurons, stats, config, "anm-random", on_step)
