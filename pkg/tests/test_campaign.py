import csv
import json

import numpy as np
import pytest

from anm.attack.perturbation import Perturbation, uniform_noise
from anm.attack.pgd import AttackConfig
from anm.campaign.reports import (
    EvalReport,
    SweepReport,
    TransferMatrix,
    amplification_report,
    build_eval_report,
    build_transfer_matrix,
    eval_report_from_cells,
    export,
    load_report,
    report_body_text,
    require_two_backbones,
    sweep_k,
    transfer_matrix_from_cells,
)
from anm.campaign.runner import CampaignConfig, Cell, attacked_accuracy, collect_cells
from anm.data.packed import save_packed
from anm.errors import MissingArtifactError, ValidationError
from anm.netgraph.models import INPUT_SHAPE
from anm.netgraph.serialization import save_model
from anm.trainer.trainer import evaluate_accuracy, finetune_head

EPSILON = 16 / 255
TINY_ATTACK = AttackConfig(epochs=1, batch_size=8, k_neurons=2)


def _zero() -> Perturbation:
    return Perturbation(np.zeros(INPUT_SHAPE, dtype=np.float32), EPSILON, {"method": "zero"})


@pytest.fixture(scope="module")
def roster(tmp_path_factory, resnet, vgg, victim, task_split, generation, head_config):
    root = tmp_path_factory.mktemp("campaign")
    train, test = task_split
    vgg_victim = finetune_head(vgg, train, head_config)
    return {
        "root": root,
        "sources": (str(save_model(resnet, root / "resnet.anmf")), str(save_model(vgg, root / "vgg.anmf"))),
        "victims": (str(save_model(victim, root / "resnet-d.anmf")), str(save_model(vgg_victim, root / "vgg-d.anmf"))),
        "testsets": (str(save_packed(test, root / "test.anmd")),),
        "generation": str(save_packed(generation, root / "gen.anmd")),
    }


def _campaign(roster, **changes) -> CampaignConfig:
    fields = {
        "sources": roster["sources"],
        "victims": roster["victims"],
        "testsets": roster["testsets"],
        "generation": roster["generation"],
        "methods": ("anm-s",),
        "perturbations": 1,
        "out_dir": str(roster["root"] / "out"),
        "attack": TINY_ATTACK,
    }
    fields.update(changes)
    return CampaignConfig(**fields)


def _cell(source, victim, method, index, clean, attacked, same) -> Cell:
    return Cell(
        source_index=source,
        victim_index=victim,
        source_id=f"src{source}",
        victim_id=f"vic{victim}",
        dataset_id="test",
        method=method,
        index=index,
        seed=index,
        clean_accuracy=clean,
        attacked_accuracy=attacked,
        same_backbone=same,
        n_test=16,
    )


def _names_campaign(**changes) -> CampaignConfig:
    fields = {
        "sources": ("a", "b"),
        "victims": ("c", "d"),
        "testsets": ("t",),
        "generation": "g",
        "methods": ("anm-m",),
        "perturbations": 2,
        "noise_baseline": False,
    }
    fields.update(changes)
    return CampaignConfig(**fields)


def test_zero_perturbation_keeps_clean_accuracy(victim, task_split):
    _, test = task_split
    assert attacked_accuracy(victim, test, [_zero()]) == evaluate_accuracy(victim, test)


def test_attacked_accuracy_averages_perturbations(victim, task_split):
    _, test = task_split
    noise = uniform_noise(EPSILON, seed=1)
    single = [attacked_accuracy(victim, test, [p]) for p in (_zero(), noise)]
    assert attacked_accuracy(victim, test, [_zero(), noise]) == pytest.approx(np.mean(single))
    with pytest.raises(ValidationError):
        attacked_accuracy(victim, test, [])


def test_attacked_accuracy_needs_labels(victim, generation):
    with pytest.raises(ValidationError):
        attacked_accuracy(victim, generation, [_zero()])


@pytest.mark.parametrize(
    "changes",
    [
        {"sources": ()},
        {"testsets": ("t1", "t2", "t3")},
        {"methods": ()},
        {"methods": ("anm-x",)},
        {"perturbations": 0},
        {"seed_neuron_policy": "loudest"},
    ],
)
def test_campaign_config_validation(changes):
    with pytest.raises(ValidationError):
        _names_campaign(**changes)


def test_noise_baseline_column():
    assert _names_campaign(noise_baseline=True).all_methods == ("anm-m", "uniform-noise")
    assert _names_campaign().all_methods == ("anm-m",)
    per_victim = _names_campaign(testsets=("t1", "t2"))
    assert per_victim.testset_for(1) == "t2"
    assert _names_campaign().testset_for(1) == "t"


def test_matched_cells(roster, victim):
    campaign = _campaign(roster)
    cells = collect_cells(campaign)
    # one matched source per victim, anm-s plus the noise column
    assert len(cells) == 4
    assert all(c.same_backbone for c in cells)
    assert [(c.victim_index, c.method) for c in cells] == [
        (0, "anm-s"), (0, "uniform-noise"), (1, "anm-s"), (1, "uniform-noise"),
    ]
    assert cells[0].victim_id == victim.model_id
    assert len(cells[0].neurons) == 1 and cells[1].neurons == ()
    assert all(c.n_test == 16 for c in cells)
    saved = sorted(p.name for p in (roster["root"] / "out" / "perturbations").rglob("*.anmp"))
    assert saved == ["anm-s-00.anmp", "anm-s-00.anmp", "uniform-noise-00.anmp", "uniform-noise-00.anmp"]

    report = eval_report_from_cells(cells, campaign)
    for row in report.rows:
        for method in report.methods:
            assert row.drops[method] == pytest.approx(row.clean_accuracy - row.attacked[method])
        assert row.adversarial_examples == 16


def test_matched_needs_shared_extractor(roster):
    campaign = _campaign(roster, sources=roster["sources"][:1])
    with pytest.raises(ValidationError, match="extractor"):
        collect_cells(campaign)


def test_transfer_needs_two_backbones(roster):
    require_two_backbones(_campaign(roster))
    with pytest.raises(ValidationError, match="two distinct backbones"):
        require_two_backbones(_campaign(roster, sources=roster["sources"][:1] * 2))


def test_transfer_matrix_from_cells():
    cells = [
        _cell(s, v, "anm-m", i, 0.8, 0.8 - 0.1 * (1 + (s == v)) - 0.01 * i, s == v)
        for s in range(2)
        for v in range(2)
        for i in range(2)
    ]
    matrix = transfer_matrix_from_cells(cells, _names_campaign())
    assert len(matrix.cells) == 4
    assert sum(c.same_backbone for c in matrix.cells) == 2
    assert matrix.sources == ("src0", "src1") and matrix.victims == ("vic0", "vic1")
    diagonal = matrix.cell("src0", "vic0", "anm-m")
    assert diagonal.perturbations == 2
    assert diagonal.drop == pytest.approx(0.205)
    assert matrix.mean_drop("anm-m", same_backbone=True) == pytest.approx(0.205)
    assert matrix.mean_drop("anm-m", same_backbone=False) == pytest.approx(0.105)
    assert np.isnan(matrix.mean_drop("anm-s"))
    with pytest.raises(KeyError):
        matrix.cell("src0", "vic9", "anm-m")


def test_eval_report_adversarial_examples():
    cells = [_cell(0, 0, "anm-m", i, 0.9, 0.5, True) for i in range(2)]
    report = eval_report_from_cells(cells, _names_campaign(victims=("c",)))
    assert report.rows[0].adversarial_examples == 2 * 16
    assert report.rows[0].drops == {"anm-m": pytest.approx(0.4)}
    assert report.rows[0].seeds == [0, 1]


def test_amplification_at_zero_perturbation(resnet, generation):
    report = amplification_report(resnet, generation, _zero())
    assert len(report.rows) == 64
    assert all(row.change == 0.0 and not row.targeted for row in report.rows)
    assert report.summary["targeted_mean_change"] is None
    assert report.summary["others_max_abs_change"] == 0.0
    picked = amplification_report(resnet, generation, _zero(), neurons=[3, 1])
    assert [row.neuron for row in picked.rows] == [3, 1]


def test_amplification_marks_targeted_neurons(resnet, generation, stats, quick_attack):
    from anm.attack.pgd import anm_s

    perturbation = anm_s(resnet, generation, 9, stats, quick_attack)
    report = amplification_report(resnet, generation, perturbation)
    assert [row.neuron for row in report.rows if row.targeted] == [9]
    assert report.summary["targeted_mean_change"] == pytest.approx(report.rows[9].change)
    with pytest.raises(ValidationError):
        amplification_report(resnet, generation, perturbation, neurons=[64])


def _reports():
    cells = [_cell(s, v, "anm-m", i, 0.75, 0.5, s == v) for s in range(2) for v in range(2) for i in range(2)]
    campaign = _names_campaign()
    return eval_report_from_cells(cells, campaign), transfer_matrix_from_cells(cells, campaign)


@pytest.mark.parametrize("fmt", ["json", "csv"])
def test_report_export_and_load(tmp_path, fmt):
    eval_report, matrix = _reports()
    loaded_eval = load_report(export(eval_report, fmt, tmp_path / f"eval.{fmt}"))
    loaded_matrix = load_report(export(matrix, fmt, tmp_path / f"matrix.{fmt}"))
    assert isinstance(loaded_eval, EvalReport) and isinstance(loaded_matrix, TransferMatrix)
    assert loaded_eval.flat_rows() == eval_report.flat_rows()
    assert loaded_matrix.flat_rows() == matrix.flat_rows()


def test_csv_columns_and_header(tmp_path):
    eval_report, _ = _reports()
    path = export(eval_report, "csv", tmp_path / "eval.csv")
    first, *rest = path.read_text(encoding="utf-8").splitlines()
    assert json.loads(first[2:])["kind"] == "eval-report"
    rows = list(csv.DictReader(rest))
    assert tuple(rows[0]) == EvalReport.columns
    assert len(rows) == 2


def test_json_carries_config_hash(tmp_path):
    eval_report, _ = _reports()
    document = json.loads(export(eval_report, "json", tmp_path / "eval.json").read_text(encoding="utf-8"))
    assert len(document["provenance"]["config_hash"]) == 64
    assert document["header"]["schema"] == 1


def test_report_body_ignores_header(tmp_path):
    eval_report, _ = _reports()
    for fmt in ("json", "csv"):
        first = report_body_text(export(eval_report, fmt, tmp_path / f"a.{fmt}"))
        second = report_body_text(export(eval_report, fmt, tmp_path / f"b.{fmt}"))
        assert first == second


def test_report_errors(tmp_path):
    eval_report, _ = _reports()
    with pytest.raises(ValidationError):
        export(eval_report, "xml", tmp_path / "eval.xml")
    with pytest.raises(MissingArtifactError):
        load_report(tmp_path / "missing.json")
    (tmp_path / "junk.json").write_text("{}", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_report(tmp_path / "junk.json")


def test_sweep_k(resnet, generation, victim, task_split):
    _, test = task_split
    report = sweep_k(resnet, generation, victim, test, [1, 3], TINY_ATTACK)
    assert [row.k for row in report.rows] == [1, 3]
    assert [len(row.neurons) for row in report.rows] == [1, 3]
    clean = evaluate_accuracy(victim, test)
    assert all(row.clean_accuracy == clean for row in report.rows)
    assert isinstance(report, SweepReport)
    with pytest.raises(ValidationError):
        sweep_k(resnet, generation, victim, test, [], TINY_ATTACK)


def test_build_reports_from_campaign(roster):
    report = build_eval_report(_campaign(roster, noise_baseline=False))
    assert report.methods == ("anm-s",)
    assert len(report.rows) == 2
    assert report.rows[0].perturbations == 1
    with pytest.raises(ValidationError, match="two distinct backbones"):
        build_transfer_matrix(_campaign(roster, sources=roster["sources"][:1]))


def test_paired_methods_share_seed_neuron(roster):
    campaign = _campaign(roster, methods=("anm-s", "anm-m"), noise_baseline=False, victims=roster["victims"][:1])
    single, multi = collect_cells(campaign)
    assert (single.method, multi.method) == ("anm-s", "anm-m")
    assert single.seed == multi.seed
    assert multi.neurons[0] == single.neurons[0]
    assert len(multi.neurons) == TINY_ATTACK.k_neurons
