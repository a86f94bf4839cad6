import numpy as np
import pytest

from anm.errors import ValidationError
from anm.trainer.trainer import TrainConfig, evaluate_accuracy, finetune_head, pretrain


@pytest.mark.parametrize(
    "changes",
    [{"lr": 0.0}, {"epochs": -1}, {"batch_size": 0}, {"momentum": 1.0}, {"freeze": "head-frozen"}],
)
def test_train_config_validation(changes):
    with pytest.raises(ValidationError):
        TrainConfig(**changes)


def test_zero_epochs_keeps_parameters(resnet, pretext):
    trained = pretrain(resnet, pretext, TrainConfig(epochs=0))
    assert trained.checksum() == resnet.checksum()


def test_pretrain_reports_each_epoch(resnet, pretext):
    records = []
    trained = pretrain(resnet, pretext, TrainConfig(lr=1e-2, epochs=2, batch_size=12), records.append)
    assert [r.epoch for r in records] == [0, 1]
    assert all(np.isfinite(r.loss) and 0.0 <= r.accuracy <= 1.0 for r in records)
    assert trained.checksum() != resnet.checksum()
    # running statistics moved away from their identity initialisation
    assert not np.allclose(trained.arrays["stem.bn.running_mean"], 0.0)


def test_pretrain_rejects_frozen_policy(resnet, pretext):
    with pytest.raises(ValidationError, match="freeze"):
        pretrain(resnet, pretext, TrainConfig(freeze="extractor-frozen"))


def test_pretrain_class_count_must_match(pretext):
    from anm.netgraph.models import build_model

    with pytest.raises(ValidationError, match="classes"):
        pretrain(build_model("smallvgg", 0, num_classes=9), pretext, TrainConfig(epochs=1))


def test_pretrain_needs_labels(resnet, generation):
    with pytest.raises(ValidationError, match="no labels"):
        pretrain(resnet, generation, TrainConfig(epochs=1))


def test_finetune_keeps_extractor_bit_identical(resnet, victim):
    assert victim.extractor_checksum() == resnet.extractor_checksum()
    assert set(victim.extractor_names) <= victim.frozen
    for name in victim.extractor_names:
        np.testing.assert_array_equal(victim.arrays[name], resnet.arrays[name])


def test_finetune_rejects_unfrozen_policy(resnet, task_split):
    train, _ = task_split
    with pytest.raises(ValidationError, match="extractor-frozen"):
        finetune_head(resnet, train, TrainConfig(freeze="none"))


def test_finetune_is_deterministic(resnet, task_split, head_config, victim):
    train, _ = task_split
    assert finetune_head(resnet, train, head_config).checksum() == victim.checksum()


def test_accuracy_is_order_invariant(victim, task_split):
    _, test = task_split
    reversed_test = test.subset(np.arange(len(test))[::-1])
    accuracy = evaluate_accuracy(victim, test)
    assert 0.0 <= accuracy <= 1.0
    assert evaluate_accuracy(victim, reversed_test) == accuracy


def test_accuracy_needs_labels(victim, generation):
    with pytest.raises(ValidationError):
        evaluate_accuracy(victim, generation)
