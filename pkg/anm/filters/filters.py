"""Фильтры предусловий для наборов данных, моделей и возмущений.

Модуль содержит вызываемые фильтры, проверяющие условия,
такие как наличие меток, роль набора данных, заморозку
экстрактора и соблюдение бюджета возмущения.
"""

from typing import Any

import numpy as np

from anm.data.datasets import Dataset
from anm.errors import ValidationError
from anm.netgraph.models import ModelGraph


class BaseFilter:
    """Базовый фильтр: вызов возвращает bool, `describe` объясняет отказ."""

    def __call__(self, obj: Any) -> bool:
        raise NotImplementedError

    def describe(self, obj: Any) -> str:
        return f"{type(self).__name__} rejected {obj!r}"


class HasLabels(BaseFilter):
    """Фильтр для проверки, что набор данных размечен.

    Возвращает:
        bool: True если у набора есть метки, иначе False

    Пример:
        ensure(HasLabels(), dataset)
    """

    def __call__(self, dataset: Dataset) -> bool:
        return dataset.has_labels

    def describe(self, dataset: Dataset) -> str:
        return f"{dataset.role} dataset has no labels"


class IsRole(BaseFilter):
    """Фильтр для проверки роли набора данных (generation, pretext, ...)."""

    def __init__(self, *roles: str) -> None:
        self.roles = roles

    def __call__(self, dataset: Dataset) -> bool:
        return dataset.role in self.roles

    def describe(self, dataset: Dataset) -> str:
        return f"expected a {' or '.join(self.roles)} dataset, got {dataset.role}"


class IsNonEmpty(BaseFilter):
    def __init__(self, minimum: int = 1) -> None:
        self.minimum = minimum

    def __call__(self, dataset: Dataset) -> bool:
        return len(dataset) >= self.minimum

    def describe(self, dataset: Dataset) -> str:
        return f"dataset has {len(dataset)} samples, need at least {self.minimum}"


class IsExtractorFrozen(BaseFilter):
    """Фильтр для проверки, что все параметры экстрактора заморожены.

    Примечания:
        - Атака предполагает замороженный предобученный экстрактор
        - Буферы batchnorm не являются параметрами и не проверяются
    """

    def __call__(self, model: ModelGraph) -> bool:
        return set(model.extractor_names) <= model.frozen

    def describe(self, model: ModelGraph) -> str:
        return f"extractor of {model.model_id} is not frozen"


class WithinBudget(BaseFilter):
    """Фильтр для проверки ограничения |δ| ≤ ε по каждой компоненте."""

    def __init__(self, epsilon: float) -> None:
        self.epsilon = epsilon

    def __call__(self, delta: np.ndarray) -> bool:
        return bool(np.all(np.abs(delta).astype(np.float64) <= self.epsilon))

    def describe(self, delta: np.ndarray) -> str:
        return f"perturbation exceeds budget: max |δ| = {float(np.abs(delta).max())} > {self.epsilon}"


def ensure(check: BaseFilter, obj: Any) -> None:
    """Бросает ValidationError, если фильтр отклоняет объект."""
    if not check(obj):
        raise ValidationError(check.describe(obj))
