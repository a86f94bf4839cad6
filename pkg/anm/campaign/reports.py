"""Campaign reports: accuracy drops, transfer grids, amplification and K sweeps.

Every report exports to JSON (full provenance) or flat CSV. Timestamps and
host details live only in the ``header`` block (first line of a CSV), so two
runs of the same campaign produce identical files outside that block.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, ClassVar, Sequence

import numpy as np

from anm.attack.perturbation import Perturbation, apply
from anm.attack.pgd import AttackConfig, anm_m
from anm.campaign.runner import Cell, CampaignConfig, attacked_accuracy, collect_cells
from anm.data.datasets import Dataset
from anm.errors import MissingArtifactError, ValidationError
from anm.filters.filters import IsRole, ensure
from anm.netgraph.models import ModelGraph, check_neurons, extract_features
from anm.netgraph.serialization import load_model
from anm.neuronlab.selection import SeedPolicy, mims_select, pick_seed_neuron
from anm.neuronlab.stats import collect_activations, neuron_stats
from anm.trainer.trainer import evaluate_accuracy
from anm.utils.helpers import config_hash, derive_seed

logger = logging.getLogger(__name__)

REPORT_SCHEMA = 1


def _header(kind: str) -> dict[str, Any]:
    return {
        "kind": kind,
        "schema": REPORT_SCHEMA,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "host": platform.node(),
    }


def _provenance(config: Any) -> dict[str, Any]:
    resolved = config.as_dict() if hasattr(config, "as_dict") else dict(config or {})
    return {"config_hash": config_hash(resolved), "config": json.loads(json.dumps(resolved, default=list))}


@dataclass
class EvalRow:
    victim_id: str
    dataset_id: str
    clean_accuracy: float
    attacked: dict[str, float]
    perturbations: int
    n_test: int
    seeds: list[int] = field(default_factory=list)

    @property
    def drops(self) -> dict[str, float]:
        return {method: self.clean_accuracy - acc for method, acc in self.attacked.items()}

    @property
    def adversarial_examples(self) -> int:
        # every perturbation applied to every test image counts once
        return self.perturbations * self.n_test


@dataclass
class EvalReport:
    kind: ClassVar[str] = "eval-report"
    columns: ClassVar[tuple[str, ...]] = (
        "victim_id",
        "dataset_id",
        "method",
        "clean_accuracy",
        "attacked_accuracy",
        "drop",
        "perturbations",
        "adversarial_examples",
    )

    methods: tuple[str, ...]
    rows: list[EvalRow]
    provenance: dict[str, Any] = field(default_factory=dict)

    def flat_rows(self) -> list[dict[str, Any]]:
        return [
            {
                "victim_id": row.victim_id,
                "dataset_id": row.dataset_id,
                "method": method,
                "clean_accuracy": row.clean_accuracy,
                "attacked_accuracy": row.attacked[method],
                "drop": row.drops[method],
                "perturbations": row.perturbations,
                "adversarial_examples": row.adversarial_examples,
            }
            for row in self.rows
            for method in self.methods
        ]

    def body(self) -> dict[str, Any]:
        return {
            "methods": list(self.methods),
            "rows": [
                {**asdict(row), "drops": row.drops, "adversarial_examples": row.adversarial_examples}
                for row in self.rows
            ],
            "provenance": self.provenance,
        }

    @classmethod
    def from_body(cls, body: dict[str, Any]) -> "EvalReport":
        rows = [
            EvalRow(
                victim_id=r["victim_id"],
                dataset_id=r["dataset_id"],
                clean_accuracy=r["clean_accuracy"],
                attacked=dict(r["attacked"]),
                perturbations=r["perturbations"],
                n_test=r["n_test"],
                seeds=list(r.get("seeds", [])),
            )
            for r in body["rows"]
        ]
        return cls(tuple(body["methods"]), rows, body.get("provenance", {}))

    @classmethod
    def from_flat(cls, flat: list[dict[str, str]]) -> "EvalReport":
        methods: list[str] = []
        rows: dict[tuple[str, str], EvalRow] = {}
        for r in flat:
            if r["method"] not in methods:
                methods.append(r["method"])
            key = (r["victim_id"], r["dataset_id"])
            if key not in rows:
                perturbations = int(r["perturbations"])
                rows[key] = EvalRow(
                    r["victim_id"],
                    r["dataset_id"],
                    float(r["clean_accuracy"]),
                    {},
                    perturbations,
                    int(r["adversarial_examples"]) // perturbations,
                )
            rows[key].attacked[r["method"]] = float(r["attacked_accuracy"])
        return cls(tuple(methods), list(rows.values()))


@dataclass
class TransferCell:
    source_id: str
    victim_id: str
    method: str
    same_backbone: bool
    clean_accuracy: float
    attacked_accuracy: float
    perturbations: int
    provenance: list[dict[str, Any]] = field(default_factory=list)

    @property
    def drop(self) -> float:
        return self.clean_accuracy - self.attacked_accuracy


@dataclass
class TransferMatrix:
    kind: ClassVar[str] = "transfer-matrix"
    columns: ClassVar[tuple[str, ...]] = (
        "source_id",
        "victim_id",
        "method",
        "same_backbone",
        "clean_accuracy",
        "attacked_accuracy",
        "drop",
        "perturbations",
    )

    sources: tuple[str, ...]
    victims: tuple[str, ...]
    methods: tuple[str, ...]
    cells: list[TransferCell]
    provenance: dict[str, Any] = field(default_factory=dict)

    def cell(self, source_id: str, victim_id: str, method: str) -> TransferCell:
        for cell in self.cells:
            if (cell.source_id, cell.victim_id, cell.method) == (source_id, victim_id, method):
                return cell
        raise KeyError((source_id, victim_id, method))

    def mean_drop(self, method: str, same_backbone: bool | None = None) -> float:
        drops = [
            c.drop
            for c in self.cells
            if c.method == method and (same_backbone is None or c.same_backbone == same_backbone)
        ]
        return float(np.mean(drops)) if drops else float("nan")

    def flat_rows(self) -> list[dict[str, Any]]:
        return [
            {
                "source_id": c.source_id,
                "victim_id": c.victim_id,
                "method": c.method,
                "same_backbone": int(c.same_backbone),
                "clean_accuracy": c.clean_accuracy,
                "attacked_accuracy": c.attacked_accuracy,
                "drop": c.drop,
                "perturbations": c.perturbations,
            }
            for c in self.cells
        ]

    def body(self) -> dict[str, Any]:
        return {
            "sources": list(self.sources),
            "victims": list(self.victims),
            "methods": list(self.methods),
            "cells": [{**asdict(c), "drop": c.drop} for c in self.cells],
            "provenance": self.provenance,
        }

    @classmethod
    def from_body(cls, body: dict[str, Any]) -> "TransferMatrix":
        cells = [
            TransferCell(
                c["source_id"],
                c["victim_id"],
                c["method"],
                bool(c["same_backbone"]),
                c["clean_accuracy"],
                c["attacked_accuracy"],
                c["perturbations"],
                list(c.get("provenance", [])),
            )
            for c in body["cells"]
        ]
        return cls(tuple(body["sources"]), tuple(body["victims"]), tuple(body["methods"]), cells, body.get("provenance", {}))

    @classmethod
    def from_flat(cls, flat: list[dict[str, str]]) -> "TransferMatrix":
        cells = [
            TransferCell(
                r["source_id"],
                r["victim_id"],
                r["method"],
                r["same_backbone"] == "1",
                float(r["clean_accuracy"]),
                float(r["attacked_accuracy"]),
                int(r["perturbations"]),
            )
            for r in flat
        ]
        return cls(
            tuple(dict.fromkeys(c.source_id for c in cells)),
            tuple(dict.fromkeys(c.victim_id for c in cells)),
            tuple(dict.fromkeys(c.method for c in cells)),
            cells,
        )


@dataclass
class AmplificationRow:
    neuron: int
    targeted: bool
    clean_mean: float
    clean_std: float
    adversarial_mean: float
    ratio: float | None

    @property
    def change(self) -> float:
        return self.adversarial_mean - self.clean_mean


@dataclass
class AmplificationReport:
    """Per-neuron before/after activations and a targeted-vs-others summary."""

    kind: ClassVar[str] = "amplification"
    columns: ClassVar[tuple[str, ...]] = (
        "neuron",
        "targeted",
        "clean_mean",
        "clean_std",
        "adversarial_mean",
        "change",
        "ratio",
    )

    rows: list[AmplificationRow]
    summary: dict[str, float | None]
    provenance: dict[str, Any] = field(default_factory=dict)

    def flat_rows(self) -> list[dict[str, Any]]:
        return [
            {
                "neuron": r.neuron,
                "targeted": int(r.targeted),
                "clean_mean": r.clean_mean,
                "clean_std": r.clean_std,
                "adversarial_mean": r.adversarial_mean,
                "change": r.change,
                "ratio": "" if r.ratio is None else r.ratio,
            }
            for r in self.rows
        ]

    def body(self) -> dict[str, Any]:
        return {
            "rows": [{**asdict(r), "change": r.change} for r in self.rows],
            "summary": self.summary,
            "provenance": self.provenance,
        }

    @classmethod
    def from_body(cls, body: dict[str, Any]) -> "AmplificationReport":
        rows = [
            AmplificationRow(r["neuron"], r["targeted"], r["clean_mean"], r["clean_std"], r["adversarial_mean"], r["ratio"])
            for r in body["rows"]
        ]
        return cls(rows, dict(body["summary"]), body.get("provenance", {}))

    @classmethod
    def from_flat(cls, flat: list[dict[str, str]]) -> "AmplificationReport":
        rows = [
            AmplificationRow(
                int(r["neuron"]),
                r["targeted"] == "1",
                float(r["clean_mean"]),
                float(r["clean_std"]),
                float(r["adversarial_mean"]),
                float(r["ratio"]) if r["ratio"] else None,
            )
            for r in flat
        ]
        return cls(rows, _amplification_summary(rows))


@dataclass
class SweepRow:
    k: int
    clean_accuracy: float
    attacked_accuracy: float
    neurons: list[int] = field(default_factory=list)

    @property
    def drop(self) -> float:
        return self.clean_accuracy - self.attacked_accuracy


@dataclass
class SweepReport:
    """Accuracy drop against the number of attacked neurons."""

    kind: ClassVar[str] = "k-sweep"
    columns: ClassVar[tuple[str, ...]] = ("k", "clean_accuracy", "attacked_accuracy", "drop")

    rows: list[SweepRow]
    provenance: dict[str, Any] = field(default_factory=dict)

    def flat_rows(self) -> list[dict[str, Any]]:
        return [
            {"k": r.k, "clean_accuracy": r.clean_accuracy, "attacked_accuracy": r.attacked_accuracy, "drop": r.drop}
            for r in self.rows
        ]

    def body(self) -> dict[str, Any]:
        return {"rows": [{**asdict(r), "drop": r.drop} for r in self.rows], "provenance": self.provenance}

    @classmethod
    def from_body(cls, body: dict[str, Any]) -> "SweepReport":
        rows = [SweepRow(r["k"], r["clean_accuracy"], r["attacked_accuracy"], list(r.get("neurons", []))) for r in body["rows"]]
        return cls(rows, body.get("provenance", {}))

    @classmethod
    def from_flat(cls, flat: list[dict[str, str]]) -> "SweepReport":
        return cls([SweepRow(int(r["k"]), float(r["clean_accuracy"]), float(r["attacked_accuracy"])) for r in flat])


Report = EvalReport | TransferMatrix | AmplificationReport | SweepReport
REPORT_TYPES: dict[str, type] = {t.kind: t for t in (EvalReport, TransferMatrix, AmplificationReport, SweepReport)}


def eval_report_from_cells(cells: Sequence[Cell], campaign: CampaignConfig) -> EvalReport:
    """Собирает таблицу падения точности из ячеек в порядке ростера жертв."""
    rows: list[EvalRow] = []
    for v in sorted({c.victim_index for c in cells}):
        mine = [c for c in cells if c.victim_index == v]
        first = mine[0]
        attacked = {
            method: float(np.mean([c.attacked_accuracy for c in mine if c.method == method]))
            for method in campaign.all_methods
        }
        rows.append(
            EvalRow(
                victim_id=first.victim_id,
                dataset_id=first.dataset_id,
                clean_accuracy=first.clean_accuracy,
                attacked=attacked,
                perturbations=campaign.perturbations,
                n_test=first.n_test,
                seeds=sorted({c.seed for c in mine}),
            )
        )
    return EvalReport(campaign.all_methods, rows, _provenance(campaign))


def transfer_matrix_from_cells(cells: Sequence[Cell], campaign: CampaignConfig) -> TransferMatrix:
    sources = tuple(dict.fromkeys(c.source_id for c in sorted(cells, key=lambda c: c.source_index)))
    victims = tuple(dict.fromkeys(c.victim_id for c in sorted(cells, key=lambda c: c.victim_index)))
    grid: list[TransferCell] = []
    for s in sorted({c.source_index for c in cells}):
        for v in sorted({c.victim_index for c in cells}):
            pair = [c for c in cells if c.source_index == s and c.victim_index == v]
            for method in campaign.all_methods:
                mine = [c for c in pair if c.method == method]
                grid.append(
                    TransferCell(
                        source_id=mine[0].source_id,
                        victim_id=mine[0].victim_id,
                        method=method,
                        same_backbone=mine[0].same_backbone,
                        clean_accuracy=mine[0].clean_accuracy,
                        attacked_accuracy=float(np.mean([c.attacked_accuracy for c in mine])),
                        perturbations=len(mine),
                        provenance=[
                            {"seed": c.seed, "neurons": list(c.neurons), "checksum": c.perturbation_checksum}
                            for c in mine
                        ],
                    )
                )
    return TransferMatrix(sources, victims, campaign.all_methods, grid, _provenance(campaign))


def build_eval_report(campaign: CampaignConfig, workers: int = 1) -> EvalReport:
    """Таблица «чистая точность / точность под атакой» для каждой жертвы.

    Параметры:
        campaign (CampaignConfig): конфигурация кампании
        workers (int): число процессов для построения возмущений

    Возвращает:
        EvalReport: строка на каждую пару (жертва, тестовый набор)

    Примечания:
        - Возмущения для жертвы строятся на f_p с тем же экстрактором
    """
    return eval_report_from_cells(collect_cells(campaign, "matched", workers), campaign)


def build_transfer_matrix(campaign: CampaignConfig, workers: int = 1) -> TransferMatrix:
    """Сетка переноса: возмущения каждого f_p против каждой жертвы f_d."""
    require_two_backbones(campaign)
    return transfer_matrix_from_cells(collect_cells(campaign, "all", workers), campaign)


def require_two_backbones(campaign: CampaignConfig) -> None:
    checksums = {load_model(path).extractor_checksum() for path in campaign.sources}
    if len(checksums) < 2:
        raise ValidationError("a transfer matrix needs at least two distinct backbones")


def _amplification_summary(rows: Sequence[AmplificationRow]) -> dict[str, float | None]:
    targeted = [r.change for r in rows if r.targeted]
    others = [r.change for r in rows if not r.targeted]
    return {
        "targeted_mean_change": float(np.mean(targeted)) if targeted else None,
        "others_mean_change": float(np.mean(others)) if others else None,
        "others_median_change": float(np.median(others)) if others else None,
        "others_max_abs_change": float(np.max(np.abs(others))) if others else None,
    }


def amplification_report(
    model: ModelGraph,
    dataset: Dataset,
    perturbation: Perturbation,
    neurons: Sequence[int] | None = None,
) -> AmplificationReport:
    """Активации нейронов до и после применения возмущения.

    Параметры:
        model (ModelGraph): модель f_p
        dataset (Dataset): отложенный генерационный набор
        perturbation (Perturbation): возмущение
        neurons (Sequence[int] | None): нейроны в отчёте; по умолчанию все d

    Возвращает:
        AmplificationReport: строки по нейронам и сводка targeted/others
    """
    ensure(IsRole("generation"), dataset)
    neurons = check_neurons(model, range(model.feature_dim) if neurons is None else neurons)
    clean = extract_features(model, dataset.images).astype(np.float64)
    adversarial = extract_features(model, apply(perturbation, dataset.images)).astype(np.float64)
    clean_mean, clean_std = clean.mean(axis=0), clean.std(axis=0)
    adv_mean = adversarial.mean(axis=0)
    targeted = set(perturbation.neurons)
    every = [
        AmplificationRow(
            neuron=j,
            targeted=j in targeted,
            clean_mean=float(clean_mean[j]),
            clean_std=float(clean_std[j]),
            adversarial_mean=float(adv_mean[j]),
            ratio=float(adv_mean[j] / clean_mean[j]) if clean_mean[j] > 0 else None,
        )
        for j in range(model.feature_dim)
    ]
    summary = _amplification_summary(every)
    logger.info(
        "Amplification on %s: targeted mean change %s, others median change %s",
        model.model_id, summary["targeted_mean_change"], summary["others_median_change"],
    )
    provenance = {"model_id": model.model_id, "dataset_id": dataset.dataset_id, "perturbation": perturbation.provenance}
    return AmplificationReport([every[j] for j in neurons], summary, provenance)


def sweep_k(
    source: ModelGraph,
    generation: Dataset,
    victim: ModelGraph,
    testset: Dataset,
    k_list: Sequence[int],
    config: AttackConfig,
    seed_neuron_policy: str = "max-variance",
    perturbations: int = 1,
    seed: int = 0,
) -> SweepReport:
    """Падение точности жертвы в зависимости от числа атакуемых нейронов K.

    Для каждого K набор выбирается через MIMS, затем строится ANM-M.
    """
    if not k_list:
        raise ValidationError("k-list is empty")
    if perturbations < 1:
        raise ValidationError(f"perturbations must be >= 1, got {perturbations}")
    acts = collect_activations(source, generation)
    stats = neuron_stats(acts)
    clean = evaluate_accuracy(victim, testset)
    rows: list[SweepRow] = []
    for k in k_list:
        crafted, chosen = [], []
        for i in range(perturbations):
            run_seed = derive_seed(seed, "k-sweep", int(k), i)
            policy = (
                SeedPolicy("random", seed=run_seed)
                if seed_neuron_policy == "random"
                else SeedPolicy.parse(seed_neuron_policy)
            )
            neurons = mims_select(acts, pick_seed_neuron(stats, policy), int(k))
            run_config = AttackConfig.from_dict({**config.as_dict(), "seed": run_seed, "k_neurons": int(k)})
            crafted.append(anm_m(source, generation, neurons, stats, run_config))
            chosen = list(neurons.indices)
        rows.append(SweepRow(int(k), clean, attacked_accuracy(victim, testset, crafted), chosen))
        logger.info("K=%d: attacked accuracy %.4f (clean %.4f)", k, rows[-1].attacked_accuracy, clean)
    provenance = _provenance(
        {
            "source": source.model_id,
            "victim": victim.model_id,
            "k_list": [int(k) for k in k_list],
            "attack": config.as_dict(),
            "seed_neuron_policy": seed_neuron_policy,
            "perturbations": perturbations,
            "seed": seed,
        }
    )
    return SweepReport(rows, provenance)


def export(report: Report, fmt: str, path: str | Path) -> Path:
    """Пишет отчёт в JSON (с полной провенанс-информацией) или плоский CSV.

    Примечания:
        - Время и хост хранятся только в блоке header (в CSV: первая строка)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _header(report.kind)
    if fmt == "json":
        document = {"header": header, **report.body()}
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    elif fmt == "csv":
        buffer = io.StringIO()
        buffer.write("# " + json.dumps(header, sort_keys=True) + "\n")
        writer = csv.DictWriter(buffer, fieldnames=report.columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(report.flat_rows())
        path.write_text(buffer.getvalue(), encoding="utf-8")
    else:
        raise ValidationError(f"unknown report format {fmt!r}; use csv or json")
    logger.info("Exported %s report to %s", report.kind, path)
    return path


def load_report(path: str | Path) -> Report:
    """Разбирает отчёт, записанный ``export``, обратно в объект."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    text = path.read_text(encoding="utf-8")
    try:
        if text.startswith("# "):
            first, _, rest = text.partition("\n")
            header = json.loads(first[2:])
            flat = list(csv.DictReader(io.StringIO(rest)))
            return REPORT_TYPES[header["kind"]].from_flat(flat)
        document = json.loads(text)
        return REPORT_TYPES[document["header"]["kind"]].from_body(document)
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: not a report file ({exc})") from exc


def report_body_text(path: str | Path) -> str:
    """Содержимое файла отчёта без блока header, для сравнения повторных запусков."""
    text = Path(path).read_text(encoding="utf-8")
    if text.startswith("# "):
        return text.partition("\n")[2]
    document = json.loads(text)
    document.pop("header", None)
    return json.dumps(document, sort_keys=True)
