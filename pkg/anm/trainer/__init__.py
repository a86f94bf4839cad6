"""Pretraining, head fine-tuning and accuracy evaluation."""

from anm.trainer.trainer import (
    HEAD_DEFAULTS,
    PRETRAIN_DEFAULTS,
    EpochRecord,
    TrainConfig,
    evaluate_accuracy,
    finetune_head,
    pretrain,
)

__all__ = [
    "HEAD_DEFAULTS",
    "PRETRAIN_DEFAULTS",
    "EpochRecord",
    "TrainConfig",
    "evaluate_accuracy",
    "finetune_head",
    "pretrain",
]
