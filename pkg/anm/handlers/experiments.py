"""Обработчики экспериментальных команд: оценка, кампании, перенос, K-sweep, усиление.

Ячейки кампаний сохраняются в БД журнала запусков, отчёты собираются из
ячеек, прочитанных обратно из базы.
"""

import argparse
import asyncio
import logging
from pathlib import Path

from anm.attack.perturbation import Perturbation, load_perturbation, uniform_noise
from anm.campaign.reports import (
    EvalReport,
    EvalRow,
    Report,
    amplification_report,
    eval_report_from_cells,
    export,
    require_two_backbones,
    sweep_k,
    transfer_matrix_from_cells,
)
from anm.campaign.runner import NOISE_METHOD, CampaignConfig, attacked_accuracy, collect_cells
from anm.config.config import load_attack_config, load_campaign_config
from anm.data.packed import load_packed
from anm.db.requests_db import CellResultRepository
from anm.errors import ValidationError
from anm.filters.filters import HasLabels, IsExtractorFrozen, ensure
from anm.handlers.pipeline import parse_ints
from anm.handlers.router import HandlerContext, Router, arg
from anm.lexicon.lexicon import MESSAGE_LEXICON
from anm.netgraph.serialization import load_model
from anm.neuronlab.selection import load_neuron_set
from anm.trainer.trainer import evaluate_accuracy
from anm.utils.helpers import config_hash, derive_seed, write_config_snapshot

logger = logging.getLogger(__name__)

router = Router(name="experiments_router")

FORMATS = ("csv", "json")


def report_format(out: Path, explicit: str | None) -> str:
    """Формат отчёта: явный --format или расширение файла (.csv, иначе json)."""
    if explicit:
        return explicit
    return "csv" if out.suffix.lower() == ".csv" else "json"


async def _write_report(ctx: HandlerContext, report: Report, args: argparse.Namespace, resolved: dict) -> None:
    path = export(report, report_format(args.out, args.format), args.out)
    await ctx.record(report.kind, path)
    await ctx.record("config-snapshot", write_config_snapshot(args.out, resolved))


def _print_eval(ctx: HandlerContext, report: EvalReport) -> None:
    for row in report.rows:
        for method in report.methods:
            ctx.answer(
                MESSAGE_LEXICON["eval_row"].format(
                    victim_id=row.victim_id,
                    method=method,
                    clean=row.clean_accuracy,
                    attacked=row.attacked[method],
                    drop=row.drops[method],
                )
            )


def evaluate_files(
    victim_paths: list[str], testset_path: str, perturbation_paths: list[str], noise_baseline: bool
) -> EvalReport:
    """Таблица падения точности для готовых файлов возмущений.

    Возмущения группируются по методу из их провенанса; колонка
    uniform-noise строится при том же ε, что и первое возмущение.
    """
    if not perturbation_paths:
        raise ValidationError("evaluate needs at least one perturbation")
    testset = load_packed(testset_path)
    ensure(HasLabels(), testset)
    groups: dict[str, list[Perturbation]] = {}
    for path in perturbation_paths:
        perturbation = load_perturbation(path)
        groups.setdefault(perturbation.method, []).append(perturbation)
    if noise_baseline and NOISE_METHOD not in groups:
        epsilon = next(iter(groups.values()))[0].epsilon
        count = max(len(group) for group in groups.values())
        groups[NOISE_METHOD] = [uniform_noise(epsilon, derive_seed(0, NOISE_METHOD, i)) for i in range(count)]

    rows = []
    for path in victim_paths:
        victim = load_model(path)
        ensure(IsExtractorFrozen(), victim)
        rows.append(
            EvalRow(
                victim_id=victim.model_id,
                dataset_id=testset.dataset_id,
                clean_accuracy=evaluate_accuracy(victim, testset),
                attacked={method: attacked_accuracy(victim, testset, group) for method, group in groups.items()},
                perturbations=max(len(group) for group in groups.values()),
                n_test=len(testset),
                seeds=sorted({int(p.provenance.get("seed", 0)) for group in groups.values() for p in group}),
            )
        )
    provenance = {
        "config_hash": config_hash({"victims": victim_paths, "testset": testset_path, "perturbations": perturbation_paths}),
        "perturbations": {method: [p.provenance for p in group] for method, group in groups.items()},
    }
    return EvalReport(tuple(groups), rows, provenance)


@router.command(
    "evaluate",
    arg("--victims", required=True),
    arg("--testset", type=Path, required=True),
    arg("--perturbations", required=True),
    arg("--noise-baseline", action="store_true"),
    arg("--format", choices=FORMATS, default=None),
    arg("--out", type=Path, required=True),
)
async def cmd_evaluate(args: argparse.Namespace, ctx: HandlerContext) -> None:
    """Обработчик команды evaluate - чистая точность и точность под атакой.

    Пример:
        python -m anm evaluate --victims a.anmf,b.anmf --testset test.anmd \\
            --perturbations p-00.anmp,p-01.anmp --noise-baseline --out eval.csv
    """
    victims = [p for p in args.victims.split(",") if p]
    perturbations = [p for p in args.perturbations.split(",") if p]
    report = await asyncio.to_thread(evaluate_files, victims, str(args.testset), perturbations, args.noise_baseline)
    _print_eval(ctx, report)
    await _write_report(ctx, report, args, vars(args))


async def _campaign_cells(ctx: HandlerContext, campaign: CampaignConfig, pairing: str):
    cells = await asyncio.to_thread(collect_cells, campaign, pairing, ctx.settings.workers)
    async with ctx.sessions() as session:
        await CellResultRepository.add_cells(session, ctx.run_id, config_hash(campaign.as_dict()), cells)
    async with ctx.sessions() as session:
        stored = await CellResultRepository.get_run_cells(session, ctx.run_id)
    logger.info("Stored %d campaign cells for run %d", len(stored), ctx.run_id)
    await ctx.record("perturbations", Path(campaign.out_dir) / "perturbations")
    return stored


@router.command(
    "campaign",
    arg("--campaign-config", type=Path, required=True),
    arg("--format", choices=FORMATS, default=None),
    arg("--out", type=Path, required=True),
)
async def cmd_campaign(args: argparse.Namespace, ctx: HandlerContext) -> None:
    """Обработчик команды campaign - полный прогон кампании и таблица падения точности."""
    campaign = load_campaign_config(args.campaign_config)
    cells = await _campaign_cells(ctx, campaign, "matched")
    report = eval_report_from_cells(cells, campaign)
    _print_eval(ctx, report)
    await _write_report(ctx, report, args, {**vars(args), "campaign": campaign.as_dict()})


@router.command(
    "transfer-matrix",
    arg("--campaign-config", type=Path, required=True),
    arg("--format", choices=FORMATS, default=None),
    arg("--out", type=Path, required=True),
)
async def cmd_transfer_matrix(args: argparse.Namespace, ctx: HandlerContext) -> None:
    """Обработчик команды transfer-matrix - возмущения каждого f_p против каждой жертвы."""
    campaign = load_campaign_config(args.campaign_config)
    await asyncio.to_thread(require_two_backbones, campaign)
    cells = await _campaign_cells(ctx, campaign, "all")
    matrix = transfer_matrix_from_cells(cells, campaign)
    for cell in matrix.cells:
        ctx.answer(
            MESSAGE_LEXICON["eval_row"].format(
                victim_id=f"{cell.source_id} → {cell.victim_id}",
                method=cell.method,
                clean=cell.clean_accuracy,
                attacked=cell.attacked_accuracy,
                drop=cell.drop,
            )
        )
    await _write_report(ctx, matrix, args, {**vars(args), "campaign": campaign.as_dict()})


@router.command(
    "sweep-k",
    arg("--model", type=Path, required=True),
    arg("--data", type=Path, required=True),
    arg("--victim", type=Path, required=True),
    arg("--testset", type=Path, required=True),
    arg("--k-list", required=True),
    arg("--config", type=Path, default=None),
    arg("--seed-neuron-policy", default="max-variance"),
    arg("--perturbations", type=int, default=1),
    arg("--seed", type=int, default=0),
    arg("--format", choices=FORMATS, default=None),
    arg("--out", type=Path, required=True),
)
async def cmd_sweep_k(args: argparse.Namespace, ctx: HandlerContext) -> None:
    """Обработчик команды sweep-k - падение точности жертвы от числа нейронов K."""
    source = load_model(args.model)
    generation = load_packed(args.data)
    victim = load_model(args.victim)
    ensure(IsExtractorFrozen(), victim)
    testset = load_packed(args.testset)
    ensure(HasLabels(), testset)
    config = load_attack_config(args.config)
    report = await asyncio.to_thread(
        sweep_k,
        source,
        generation,
        victim,
        testset,
        parse_ints(args.k_list),
        config,
        args.seed_neuron_policy,
        args.perturbations,
        args.seed,
    )
    for row in report.rows:
        ctx.answer(MESSAGE_LEXICON["sweep_row"].format(k=row.k, attacked=row.attacked_accuracy, drop=row.drop))
    await _write_report(ctx, report, args, {**vars(args), "attack": config.as_dict()})


@router.command(
    "amplification",
    arg("--model", type=Path, required=True),
    arg("--data", type=Path, required=True),
    arg("--perturbation", type=Path, required=True),
    arg("--neurons", default=None),
    arg("--neuron-set", type=Path, default=None),
    arg("--format", choices=FORMATS, default=None),
    arg("--out", type=Path, required=True),
)
async def cmd_amplification(args: argparse.Namespace, ctx: HandlerContext) -> None:
    """Обработчик команды amplification - активации нейронов до и после возмущения."""
    model = load_model(args.model)
    dataset = load_packed(args.data)
    perturbation = load_perturbation(args.perturbation)
    neurons = parse_ints(args.neurons) or None
    if args.neuron_set:
        neurons = list(load_neuron_set(args.neuron_set).indices)
    report = await asyncio.to_thread(amplification_report, model, dataset, perturbation, neurons)

    def fmt(value: float | None) -> str:
        return "n/a" if value is None else f"{value:.4f}"

    ctx.answer(
        MESSAGE_LEXICON["amplification"].format(
            targeted=fmt(report.summary["targeted_mean_change"]), others=fmt(report.summary["others_median_change"])
        )
    )
    await _write_report(ctx, report, args, vars(args))
