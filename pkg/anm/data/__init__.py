"""Synthetic datasets, ANMD files and deterministic batching."""

from anm.data.datasets import (
    IMAGE_SHAPE,
    KINDS,
    ROLES,
    BatchPlan,
    Dataset,
    batches,
    generate_synthetic,
    split_dataset,
)
from anm.data.packed import load_packed, save_packed

__all__ = [
    "IMAGE_SHAPE",
    "KINDS",
    "ROLES",
    "BatchPlan",
    "Dataset",
    "batches",
    "generate_synthetic",
    "load_packed",
    "save_packed",
    "split_dataset",
]
