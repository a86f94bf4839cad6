"""Гауссова взаимная информация между нейронами и жадный отбор MIMS.

Все определители считаются в логарифмической шкале через треугольное
разложение; сами определители никогда не формируются.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from anm.errors import MissingArtifactError, NotPositiveDefiniteError, NumericalError, ValidationError
from anm.neuronlab.stats import ActivationMatrix, NeuronStats

logger = logging.getLogger(__name__)

RIDGE_SCALE = 1e-6
RIDGE_FLOOR = 1e-12
SEED_POLICIES = ("max-variance", "explicit", "random")


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    subset: tuple[int, ...]
    matrix: np.ndarray
    ridge: float


@dataclass(frozen=True)
class NeuronSet:
    """Упорядоченный набор нейронов Ω и прирост MI на каждом шаге.

    Первый элемент всегда затравочный нейрон φ_0, поэтому
    ``len(gains) == len(indices) - 1``.
    """

    indices: tuple[int, ...]
    gains: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.indices:
            raise ValidationError("neuron set is empty")
        if len(set(self.indices)) != len(self.indices):
            raise ValidationError(f"duplicate neurons in {self.indices}")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def seed(self) -> int:
        return self.indices[0]


@dataclass(frozen=True)
class SeedPolicy:
    """Правило выбора затравочного нейрона.

    Поля:
        kind (str): max-variance | explicit | random
        index (int): номер нейрона для explicit
        seed (int): сид для random
    """

    kind: str = "max-variance"
    index: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in SEED_POLICIES:
            raise ValidationError(f"unknown seed-neuron policy {self.kind!r}; known: {', '.join(SEED_POLICIES)}")
        if self.kind == "explicit" and self.index is None:
            raise ValidationError("explicit seed-neuron policy needs an index")

    @classmethod
    def parse(cls, text: str) -> "SeedPolicy":
        """`max-variance`, `explicit:5` или `random:3`."""
        kind, _, arg = text.partition(":")
        try:
            if kind == "explicit":
                return cls(kind, index=int(arg) if arg else None)
            if kind == "random":
                return cls(kind, seed=int(arg) if arg else 0)
        except ValueError as exc:
            raise ValidationError(f"bad seed-neuron policy {text!r}") from exc
        return cls(kind)


def _check_subset(subset: Sequence[int], d: int) -> tuple[int, ...]:
    subset = tuple(int(j) for j in subset)
    if not subset:
        raise ValidationError("neuron subset is empty")
    if len(set(subset)) != len(subset):
        raise ValidationError(f"duplicate indices in neuron subset {subset}")
    for j in subset:
        if not 0 <= j < d:
            raise ValidationError(f"neuron {j} out of range [0, {d})")
    return subset


def _raw_covariance(values: np.ndarray) -> np.ndarray:
    centred = values - values.mean(axis=0)
    return centred.T @ centred / values.shape[0]


def ridge_for(raw: np.ndarray) -> float:
    """λ = 1e-6 · trace/|Ω|, не меньше 1e-12 при нулевом следе."""
    lam = RIDGE_SCALE * float(np.trace(raw)) / raw.shape[0]
    return lam if lam > 0 else RIDGE_FLOOR


def _regularize(raw: np.ndarray, ridge: float) -> np.ndarray:
    matrix = raw + ridge * np.eye(raw.shape[0])
    return (matrix + matrix.T) / 2


def covariance(acts: ActivationMatrix, subset: Sequence[int], ridge: float | None = None) -> CovarianceEstimate:
    """Центрированная ковариация (делитель n) подмножества нейронов с гребнем λI.

    Параметры:
        acts (ActivationMatrix): матрица активаций
        subset (Sequence[int]): упорядоченные номера нейронов без повторов
        ridge (float | None): λ; по умолчанию 1e-6 · trace/|Ω|

    Возвращает:
        CovarianceEstimate: матрица |Ω| × |Ω| и применённое λ
    """
    subset = _check_subset(subset, acts.d)
    raw = _raw_covariance(acts.values[:, subset])
    lam = ridge_for(raw) if ridge is None else float(ridge)
    return CovarianceEstimate(subset, _regularize(raw, lam), lam)


def log_det_spd(matrix: np.ndarray) -> float:
    """log det через разложение Холецкого: 2·Σ log(L_ii).

    Возвращает:
        float: логарифм определителя

    Исключения:
        NotPositiveDefiniteError: неположительный ведущий элемент, с его номером
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"log-det needs a square matrix, got shape {a.shape}")
    size = a.shape[0]
    lower = np.zeros_like(a)
    total = 0.0
    for k in range(size):
        pivot = a[k, k] - lower[k, :k] @ lower[k, :k]
        if not pivot > 0:
            raise NotPositiveDefiniteError(k, float(pivot))
        root = np.sqrt(pivot)
        lower[k, k] = root
        lower[k + 1:, k] = (a[k + 1:, k] - lower[k + 1:, :k] @ lower[k, :k]) / root
        total += np.log(root)
    return 2.0 * total


def gaussian_mi_from_cov(cov: np.ndarray, omega: Sequence[int], phi: int, ridge: float = 0.0) -> float:
    """½·(log det Σ_Ω + log det Σ_φ − log det Σ_{Ω∪φ}) на готовой ковариации.

    Один и тот же ``ridge`` добавляется ко всем трём матрицам.
    """
    omega = tuple(int(j) for j in omega)
    if not omega:
        raise ValidationError("Ω must be nonempty")
    if phi in omega:
        raise ValidationError(f"candidate {phi} already belongs to Ω")
    joint = omega + (int(phi),)
    block = _regularize(cov[np.ix_(joint, joint)], ridge)
    return 0.5 * (log_det_spd(block[:-1, :-1]) + log_det_spd(block[-1:, -1:]) - log_det_spd(block))


def gaussian_mi(acts: ActivationMatrix, omega: Sequence[int], phi: int) -> float:
    """I(Ω; φ) при гауссовом допущении, λ берётся от совместной матрицы Ω∪{φ}."""
    joint = _check_subset(tuple(omega) + (phi,), acts.d)
    raw = _raw_covariance(acts.values[:, joint])
    positions = tuple(range(len(joint) - 1))
    return gaussian_mi_from_cov(raw, positions, len(joint) - 1, ridge_for(raw))


def _mi_on_full(raw: np.ndarray, omega: tuple[int, ...], phi: int) -> float:
    joint = omega + (phi,)
    return gaussian_mi_from_cov(raw, omega, phi, ridge_for(raw[np.ix_(joint, joint)]))


def mims_select(acts: ActivationMatrix, seed_neuron: int, k: int) -> NeuronSet:
    """Жадный поиск набора нейронов с максимальной взаимной информацией.

    Параметры:
        acts (ActivationMatrix): матрица активаций генерационного набора
        seed_neuron (int): затравочный нейрон φ_0
        k (int): размер набора, 1 ≤ K ≤ d

    Возвращает:
        NeuronSet: Ω в порядке добавления и прирост MI на каждом шаге

    Примечания:
        - При равенстве прироста выбирается нейрон с меньшим номером
    """
    d = acts.d
    if not 1 <= k <= d:
        raise ValidationError(f"K must lie in 1..{d}, got {k}")
    if not 0 <= seed_neuron < d:
        raise ValidationError(f"seed neuron {seed_neuron} out of range [0, {d})")
    raw = _raw_covariance(acts.values)
    omega = (int(seed_neuron),)
    gains: list[float] = []
    while len(omega) < k:
        best, best_gain = -1, -np.inf
        for phi in range(d):
            if phi in omega:
                continue
            gain = _mi_on_full(raw, omega, phi)
            if gain > best_gain:
                best, best_gain = phi, gain
        if best < 0:
            raise NumericalError(f"MIMS gains are all NaN after {list(omega)}")
        omega += (best,)
        gains.append(float(best_gain))
        logger.debug("MIMS step %d: neuron %d, gain %.6f", len(omega) - 1, best, best_gain)
    logger.info("MIMS selected %s from seed %d", list(omega), seed_neuron)
    return NeuronSet(omega, tuple(gains))


def pick_seed_neuron(stats: NeuronStats, policy: SeedPolicy | str = "max-variance") -> int:
    if isinstance(policy, str):
        policy = SeedPolicy.parse(policy)
    d = stats.d
    if policy.kind == "explicit":
        if not 0 <= policy.index < d:
            raise ValidationError(f"explicit seed neuron {policy.index} out of range [0, {d})")
        return int(policy.index)
    if policy.kind == "random":
        return int(np.random.default_rng(policy.seed).integers(d))
    # np.argmax returns the first maximum
    return int(np.argmax(stats.std))


def save_neuron_set(neurons: NeuronSet, path: str | Path, **provenance: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"indices": list(neurons.indices), "gains": list(neurons.gains), **provenance}
    path.write_text(json.dumps(document, indent=2, sort_keys=True), encoding="utf-8")
    logger.info("Saved neuron set %s to %s", list(neurons.indices), path)
    return path


def load_neuron_set(path: str | Path) -> NeuronSet:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
        return NeuronSet(tuple(int(j) for j in document["indices"]), tuple(document.get("gains", ())))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed neuron set ({exc})") from exc
