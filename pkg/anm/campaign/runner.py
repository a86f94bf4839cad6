"""Campaign cells: craft perturbations per source model and score them on victims.

A cell is one (source f_p, victim f_d, method, perturbation index) tuple.
Perturbations are crafted once per (source, method, index) and reused for
every victim; crafting jobs may run in worker processes, and results are
merged in roster order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from anm.attack.perturbation import Perturbation, apply, save_perturbation, uniform_noise
from anm.attack.pgd import AttackConfig, anm_m, anm_random, anm_s
from anm.data.datasets import Dataset
from anm.data.packed import load_packed
from anm.errors import ValidationError
from anm.filters.filters import HasLabels, IsExtractorFrozen, IsNonEmpty, WithinBudget, ensure
from anm.netgraph.models import ModelGraph, predict
from anm.netgraph.serialization import load_model
from anm.neuronlab.selection import SeedPolicy, mims_select, pick_seed_neuron
from anm.neuronlab.stats import ActivationMatrix, collect_activations, neuron_stats
from anm.trainer.trainer import evaluate_accuracy
from anm.utils.helpers import array_checksum, derive_seed, short_hash

logger = logging.getLogger(__name__)

METHODS = ("anm-s", "anm-random", "anm-m")
NOISE_METHOD = "uniform-noise"


@dataclass(frozen=True)
class CampaignConfig:
    """Ростеры моделей и данных, методы и число возмущений на ячейку.

    Поля:
        sources (tuple[str]): ANMF-файлы предобученных моделей f_p
        victims (tuple[str]): ANMF-файлы downstream-моделей f_d
        testsets (tuple[str]): ANMD-файлы тестовых наборов (один общий или по одному на жертву)
        generation (str): ANMD-файл генерационного набора
        methods (tuple[str]): anm-s | anm-random | anm-m
        perturbations (int): возмущений на ячейку, >= 1
        seed (int): глобальный сид
        out_dir (str): каталог результатов
        attack (AttackConfig): параметры атаки
        seed_neuron_policy (str): random (по сиду возмущения) или политика SeedPolicy
        noise_baseline (bool): добавлять колонку равномерного шума
    """

    sources: tuple[str, ...]
    victims: tuple[str, ...]
    testsets: tuple[str, ...]
    generation: str
    methods: tuple[str, ...] = METHODS
    perturbations: int = 10
    seed: int = 0
    out_dir: str = "artifacts/campaign"
    attack: AttackConfig = field(default_factory=AttackConfig)
    seed_neuron_policy: str = "random"
    noise_baseline: bool = True

    def __post_init__(self) -> None:
        if not self.sources or not self.victims or not self.testsets:
            raise ValidationError("campaign rosters must be nonempty")
        if len(self.testsets) not in (1, len(self.victims)):
            raise ValidationError(
                f"{len(self.testsets)} test sets for {len(self.victims)} victims; give one shared or one per victim"
            )
        if not self.methods:
            raise ValidationError("campaign needs at least one method")
        for method in self.methods:
            if method not in METHODS:
                raise ValidationError(f"unknown method {method!r}; known: {', '.join(METHODS)}")
        if self.perturbations < 1:
            raise ValidationError(f"perturbations per cell must be >= 1, got {self.perturbations}")
        if self.seed_neuron_policy != "random":
            SeedPolicy.parse(self.seed_neuron_policy)

    @property
    def all_methods(self) -> tuple[str, ...]:
        if self.noise_baseline and NOISE_METHOD not in self.methods:
            return self.methods + (NOISE_METHOD,)
        return self.methods

    def testset_for(self, victim_index: int) -> str:
        return self.testsets[0] if len(self.testsets) == 1 else self.testsets[victim_index]

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class Cell:
    source_index: int
    victim_index: int
    source_id: str
    victim_id: str
    dataset_id: str
    method: str
    index: int
    seed: int
    clean_accuracy: float
    attacked_accuracy: float
    same_backbone: bool
    neurons: tuple[int, ...] = ()
    perturbation_checksum: str = ""
    n_test: int = 0

    @property
    def drop(self) -> float:
        return self.clean_accuracy - self.attacked_accuracy


@dataclass(frozen=True)
class CraftJob:
    source_index: int
    source_path: str
    generation_path: str
    method: str
    index: int
    seed: int
    attack: AttackConfig
    acts: ActivationMatrix
    seed_neuron_policy: str


def attacked_accuracy(victim: ModelGraph, testset: Dataset, perturbations: Sequence[Perturbation]) -> float:
    """Mean over perturbations of the victim's accuracy on {apply(δ, x)}."""
    if not perturbations:
        raise ValidationError("attacked accuracy needs at least one perturbation")
    ensure(HasLabels(), testset)
    ensure(IsNonEmpty(), testset)
    scores = []
    for perturbation in perturbations:
        ensure(WithinBudget(perturbation.epsilon), perturbation.delta)
        preds = predict(victim, apply(perturbation, testset.images))
        scores.append(float(np.mean(preds == testset.labels)))
    return float(np.mean(scores))


def _seed_policy(job: CraftJob) -> SeedPolicy:
    if job.seed_neuron_policy == "random":
        return SeedPolicy("random", seed=job.seed)
    return SeedPolicy.parse(job.seed_neuron_policy)


def craft_one(job: CraftJob) -> Perturbation:
    """Builds one perturbation; top-level so worker processes can run it."""
    config = replace(job.attack, seed=job.seed)
    if job.method == NOISE_METHOD:
        return uniform_noise(config.epsilon, job.seed)
    model = load_model(job.source_path)
    generation = load_packed(job.generation_path)
    stats = neuron_stats(job.acts)
    if job.method == "anm-s":
        return anm_s(model, generation, pick_seed_neuron(stats, _seed_policy(job)), stats, config)
    if job.method == "anm-random":
        return anm_random(model, generation, config.k_neurons, stats, config)
    neurons = mims_select(job.acts, pick_seed_neuron(stats, _seed_policy(job)), config.k_neurons)
    return anm_m(model, generation, neurons, stats, config)


def _run_jobs(jobs: list[CraftJob], workers: int) -> list[Perturbation]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(craft_one, jobs))
    return [craft_one(job) for job in jobs]


def _load_victims(campaign: CampaignConfig) -> list[tuple[ModelGraph, Dataset]]:
    victims = []
    for i, path in enumerate(campaign.victims):
        victim = load_model(path)
        ensure(IsExtractorFrozen(), victim)
        testset = load_packed(campaign.testset_for(i))
        ensure(HasLabels(), testset)
        victims.append((victim, testset))
    return victims


def collect_cells(
    campaign: CampaignConfig,
    pairing: str = "matched",
    workers: int = 1,
) -> list[Cell]:
    """Строит возмущения и оценивает все ячейки кампании.

    Параметры:
        campaign (CampaignConfig): конфигурация кампании
        pairing (str): matched: каждая жертва против f_p с тем же экстрактором;
                       all: все f_p против всех жертв
        workers (int): число процессов для построения возмущений

    Возвращает:
        list[Cell]: ячейки в порядке (source, victim, method, index)
    """
    if pairing not in ("matched", "all"):
        raise ValidationError(f"unknown pairing {pairing!r}")
    sources = [(path, load_model(path)) for path in campaign.sources]
    generation = load_packed(campaign.generation)
    victims = _load_victims(campaign)

    pairs: list[tuple[int, int]] = []
    for v, (victim, _) in enumerate(victims):
        matches = [s for s, (_, src) in enumerate(sources) if src.extractor_checksum() == victim.extractor_checksum()]
        if pairing == "matched":
            if not matches:
                raise ValidationError(f"no source model shares the extractor of victim {victim.model_id}")
            pairs.append((matches[0], v))
        else:
            pairs.extend((s, v) for s in range(len(sources)))
    pairs.sort()
    needed = sorted({s for s, _ in pairs})

    jobs: list[CraftJob] = []
    for s in needed:
        path, source = sources[s]
        acts = collect_activations(source, generation)
        for method in campaign.all_methods:
            for i in range(campaign.perturbations):
                seed = derive_seed(campaign.seed, i)
                jobs.append(
                    CraftJob(s, path, campaign.generation, method, i, seed, campaign.attack, acts, campaign.seed_neuron_policy)
                )
    logger.info("Crafting %d perturbations for %d source models", len(jobs), len(needed))
    crafted = _run_jobs(jobs, workers)
    by_key = {(job.source_index, job.method, job.index): (job, p) for job, p in zip(jobs, crafted)}

    out_dir = Path(campaign.out_dir)
    for (s, method, i), (_, perturbation) in by_key.items():
        save_perturbation(perturbation, out_dir / "perturbations" / sources[s][1].model_id / f"{method}-{i:02d}.anmp")

    clean = {v: evaluate_accuracy(victim, testset) for v, (victim, testset) in enumerate(victims)}
    cells: list[Cell] = []
    for s, v in pairs:
        source = sources[s][1]
        victim, testset = victims[v]
        same = source.extractor_checksum() == victim.extractor_checksum()
        for method in campaign.all_methods:
            for i in range(campaign.perturbations):
                job, perturbation = by_key[(s, method, i)]
                cells.append(
                    Cell(
                        source_index=s,
                        victim_index=v,
                        source_id=source.model_id,
                        victim_id=victim.model_id,
                        dataset_id=testset.dataset_id,
                        method=method,
                        index=i,
                        seed=job.seed,
                        clean_accuracy=clean[v],
                        attacked_accuracy=attacked_accuracy(victim, testset, [perturbation]),
                        same_backbone=same,
                        neurons=perturbation.neurons,
                        perturbation_checksum=short_hash(array_checksum(perturbation.delta)),
                        n_test=len(testset),
                    )
                )
        logger.info("Scored %s against %s", source.model_id, victim.model_id)
    return cells

