"""Обработчики команд конвейера: данные, обучение, статистика, отбор нейронов, атаки.

Тяжёлые вычисления выполняются в отдельном потоке через asyncio.to_thread,
обработчик только разбирает аргументы, сохраняет результаты и пишет их в журнал.
"""

import argparse
import asyncio
import csv
import logging
from dataclasses import asdict
from pathlib import Path

from anm.attack.perturbation import export_visual, save_perturbation
from anm.attack.pgd import AttackConfig, anm_m, anm_random, anm_s
from anm.config.config import load_attack_config, load_train_config
from anm.data.datasets import KINDS, ROLES, generate_synthetic, split_dataset
from anm.data.packed import load_packed, save_packed
from anm.errors import ValidationError
from anm.handlers.router import HandlerContext, Router, arg
from anm.lexicon.lexicon import MESSAGE_LEXICON
from anm.netgraph.models import ARCHITECTURES, build_model
from anm.netgraph.serialization import load_model, save_model
from anm.neuronlab.selection import (
    NeuronSet,
    SeedPolicy,
    load_neuron_set,
    mims_select,
    pick_seed_neuron,
    save_neuron_set,
)
from anm.neuronlab.stats import collect_activations, export_stats, load_stats, neuron_stats
from anm.trainer.trainer import EpochRecord, evaluate_accuracy, finetune_head, pretrain
from anm.utils.helpers import array_checksum, derive_seed, short_hash, write_config_snapshot

logger = logging.getLogger(__name__)

router = Router(name="pipeline_router")


def parse_ints(text: str | None) -> list[int]:
    if not text:
        return []
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from exc


def numbered(out: Path, index: int, count: int) -> Path:
    """`out` для одного файла, иначе `<stem>-<index><suffix>`."""
    return out if count == 1 else out.with_name(f"{out.stem}-{index:02d}{out.suffix}")


def write_training_log(records: list[EpochRecord], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=("epoch", "loss", "accuracy"))
        writer.writeheader()
        writer.writerows(asdict(r) for r in records)
    return path


async def _snapshot(ctx: HandlerContext, out: Path, resolved: dict) -> None:
    await ctx.record("config-snapshot", write_config_snapshot(out, resolved))


@router.command(
    "gen-data",
    arg("--kind", choices=KINDS, required=True),
    arg("--classes", type=int, default=8),
    arg("--n", type=int, required=True),
    arg("--seed", type=int, default=0),
    arg("--task-seed", type=int, default=None),
    arg("--role", choices=ROLES, default=None),
    arg("--test-n", type=int, default=0),
    arg("--out", type=Path, required=True),
)
async def cmd_gen_data(args: argparse.Namespace, ctx: HandlerContext) -> None:
    """Обработчик команды gen-data - генерация синтетического набора данных.

    При заданном --test-n набор делится на обучающую часть (--out) и
    тестовую (`<out>-test`).

    Пример:
        python -m anm gen-data --kind task --classes 8 --n 600 --test-n 200 --out artifacts/task.anmd
    """
    dataset = await asyncio.to_thread(generate_synthetic, args.kind, args.classes, args.n, args.seed, args.task_seed)
    if args.role:
        dataset = dataset.with_role(args.role)
    outputs = [(args.out, dataset)]
    if args.test_n:
        train, test = split_dataset(dataset, args.test_n, args.seed)
        outputs = [(args.out, train), (args.out.with_name(f"{args.out.stem}-test{args.out.suffix}"), test)]
    for path, part in outputs:
        save_packed(part, path)
        ctx.answer(
            MESSAGE_LEXICON["dataset"].format(
                dataset_id=part.dataset_id, n=len(part), classes=part.num_classes, role=part.role
            )
        )
        await ctx.record("dataset", path, part.checksum)
    await _snapshot(ctx, args.out, vars(args))


def _log_epochs(ctx: HandlerContext, records: list[EpochRecord]) -> None:
    for r in records:
        ctx.answer(MESSAGE_LEXICON["epoch"].format(epoch=r.epoch, loss=r.loss, accuracy=r.accuracy))


@router.command(
    "pretrain",
    arg("--arch", choices=sorted(ARCHITECTURES), required=True),
    arg("--data", type=Path, required=True),
    arg("--config", type=Path, default=None),
    arg("--seed", type=int, default=0),
    arg("--out", type=Path, required=True),
)
async def cmd_pretrain(args: argparse.Namespace, ctx: HandlerContext) -> None:
    """Обработчик команды pretrain - обучение f_p на pretext-задаче.

    Рядом с моделью пишется журнал обучения `<out>.log.csv`.
    """
    dataset = load_packed(args.data)
    config = load_train_config(args.config, "pretrain")
    model = build_model(args.arch, args.seed, num_classes=dataset.num_classes)
    records: list[EpochRecord] = []
    trained = await asyncio.to_thread(pretrain, model, dataset, config, records.append)
    _log_epochs(ctx, records)
    save_model(trained, args.out)
    await ctx.record("model", args.out, trained.checksum())
    await ctx.record("training-log", write_training_log(records, args.out.with_name(args.out.name + ".log.csv")))
    await _snapshot(ctx, args.out, {**vars(args), "train": config.as_dict(), "data_checksum": dataset.checksum})


@router.command(
    "finetune",
    arg("--pretrained", type=Path, required=True),
    arg("--data", type=Path, required=True),
    arg("--config", type=Path, default=None),
    arg("--out", type=Path, required=True),
)
async def cmd_finetune(args: argparse.Namespace, ctx: HandlerContext) -> None:
    """Обработчик команды finetune - новая голова поверх замороженного экстрактора."""
    pretrained = load_model(args.pretrained)
    dataset = load_packed(args.data)
    config = load_train_config(args.config, "finetune")
    records: list[EpochRecord] = []
    victim = await asyncio.to_thread(finetune_head, pretrained, dataset, config, records.append)
    _log_epochs(ctx, records)
    ctx.answer(
        MESSAGE_LEXICON["accuracy"].format(
            model_id=victim.model_id, dataset_id=dataset.dataset_id, accuracy=evaluate_accuracy(victim, dataset)
        )
    )
    save_model(victim, args.out)
    await ctx.record("model", args.out, victim.checksum())
    await ctx.record("training-log", write_training_log(records, args.out.with_name(args.out.name + ".log.csv")))
    await _snapshot(ctx, args.out, {**vars(args), "train": config.as_dict(), "data_checksum": dataset.checksum})


@router.command(
    "stats",
    arg("--model", type=Path, required=True),
    arg("--data", type=Path, required=True),
    arg("--out", type=Path, required=True),
)
async def cmd_stats(args: argparse.Namespace, ctx: HandlerContext) -> None:
    """Обработчик команды stats - μ, σ и гистограммы нейронов (CSV или JSON по расширению)."""
    model = load_model(args.model)
    dataset = load_packed(args.data)
    acts = await asyncio.to_thread(collect_activations, model, dataset)
    export_stats(neuron_stats(acts), args.out)
    await ctx.record("stats", args.out)
    await _snapshot(ctx, args.out, {**vars(args), "model_id": model.model_id, "data_checksum": dataset.checksum})


@router.command(
    "select-neurons",
    arg("--model", type=Path, required=True),
    arg("--data", type=Path, required=True),
    arg("--seed-neuron-policy", default="max-variance"),
    arg("--k", type=int, default=12),
    arg("--out", type=Path, required=True),
)
async def cmd_select_neurons(args: argparse.Namespace, ctx: HandlerContext) -> None:
    """Обработчик команды select-neurons - жадный отбор MIMS."""
    model = load_model(args.model)
    dataset = load_packed(args.data)
    policy = SeedPolicy.parse(args.seed_neuron_policy)
    acts = await asyncio.to_thread(collect_activations, model, dataset)
    seed_neuron = pick_seed_neuron(neuron_stats(acts), policy)
    neurons = await asyncio.to_thread(mims_select, acts, seed_neuron, args.k)
    ctx.answer(MESSAGE_LEXICON["neurons"].format(neurons=list(neurons.indices)))
    save_neuron_set(neurons, args.out, model_id=model.model_id, policy=args.seed_neuron_policy)
    await ctx.record("neuron-set", args.out)
    await _snapshot(ctx, args.out, {**vars(args), "model_id": model.model_id, "data_checksum": dataset.checksum})


def _craft(method, model, dataset, stats, acts, fixed: NeuronSet | None, config: AttackConfig):
    if method == "anm-s":
        neuron = fixed.indices[0] if fixed else pick_seed_neuron(stats, SeedPolicy("random", seed=config.seed))
        return anm_s(model, dataset, neuron, stats, config)
    if method == "anm-random":
        return anm_random(model, dataset, config.k_neurons, stats, config)
    if fixed is None:
        fixed = mims_select(acts, pick_seed_neuron(stats, SeedPolicy("random", seed=config.seed)), config.k_neurons)
    return anm_m(model, dataset, fixed, stats, config)


@router.command(
    "attack",
    arg("--method", choices=("anm-s", "anm-random", "anm-m"), required=True),
    arg("--model", type=Path, required=True),
    arg("--data", type=Path, required=True),
    arg("--neurons", default=None),
    arg("--neuron-set", type=Path, default=None),
    arg("--config", type=Path, default=None),
    arg("--count", type=int, default=1),
    arg("--seed", type=int, default=None),
    arg("--stats", type=Path, default=None),
    arg("--visual", action="store_true"),
    arg("--out", type=Path, required=True),
)
async def cmd_attack(args: argparse.Namespace, ctx: HandlerContext) -> None:
    """Обработчик команды attack - построение универсальных возмущений.

    Без --neurons/--neuron-set нейроны выбираются по сиду каждого возмущения.
    При --count > 1 файлы получают номер: `<stem>-00.anmp`, `<stem>-01.anmp`, ...
    """
    if args.count < 1:
        raise ValidationError(f"--count must be >= 1, got {args.count}")
    model = load_model(args.model)
    dataset = load_packed(args.data)
    config = load_attack_config(args.config)
    base_seed = config.seed if args.seed is None else args.seed
    fixed = load_neuron_set(args.neuron_set) if args.neuron_set else None
    if args.neurons:
        fixed = NeuronSet(tuple(parse_ints(args.neurons)))
    acts = await asyncio.to_thread(collect_activations, model, dataset)
    stats = load_stats(args.stats) if args.stats else neuron_stats(acts)

    for i in range(args.count):
        seed = base_seed if args.count == 1 else derive_seed(base_seed, args.method, i)
        run_config = AttackConfig.from_dict({**config.as_dict(), "seed": seed})
        perturbation = await asyncio.to_thread(_craft, args.method, model, dataset, stats, acts, fixed, run_config)
        ctx.answer(
            MESSAGE_LEXICON["attack"].format(
                method=args.method, index=i, neurons=list(perturbation.neurons), loss=perturbation.final_loss
            )
        )
        path = numbered(args.out, i, args.count)
        save_perturbation(perturbation, path)
        await ctx.record("perturbation", path, short_hash(array_checksum(perturbation.delta)))
        if args.visual:
            await ctx.record("visual", export_visual(perturbation, path.with_suffix(".npy")))
    await _snapshot(ctx, args.out, {**vars(args), "attack": config.as_dict(), "model_id": model.model_id})
