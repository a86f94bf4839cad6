"""Synthetic desk-scale datasets and deterministic batching.

Three generator families:

* ``generation``: unlabeled textured random fields (attacker-side public data);
* ``pretext``: labeled images of the same texture family, classes defined
  by grating orientation and palette (used to pretrain f_p);
* ``task``: class-conditional shapes and gratings standing in for the
  downstream tasks (a different family, so attacker and victim data are
  distribution-mismatched).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from anm.errors import ValidationError
from anm.utils.helpers import array_checksum, checksum_seed

logger = logging.getLogger(__name__)

IMAGE_SHAPE = (3, 32, 32)
ROLES = ("generation", "pretext", "downstream-train", "downstream-test")
KINDS = ("generation", "pretext", "task")

_KIND_ROLE = {"generation": "generation", "pretext": "pretext", "task": "downstream-train"}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Images (n × 3 × 32 × 32, values in [0, 1]) with optional labels."""

    images: np.ndarray
    _labels: np.ndarray | None
    num_classes: int
    role: str
    manifest: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        images = np.ascontiguousarray(self.images, dtype=np.float32)
        if images.ndim != 4 or images.shape[1:] != IMAGE_SHAPE:
            raise ValidationError(f"images must have shape (n, 3, 32, 32), got {images.shape}")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValidationError("pixel values must lie in [0, 1]")
        if self.role not in ROLES:
            raise ValidationError(f"unknown role {self.role!r}")
        images.setflags(write=False)
        object.__setattr__(self, "images", images)
        labels = self._labels
        if self.role == "generation":
            if labels is not None:
                raise ValidationError("generation datasets carry no labels")
        elif labels is not None:
            labels = np.ascontiguousarray(labels, dtype=np.int64)
            if labels.shape != (len(images),):
                raise ValidationError(f"{len(images)} images but {labels.shape} labels")
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ValidationError(
                    f"labels outside [0, {self.num_classes}): found {labels.min()}..{labels.max()}"
                )
            labels.setflags(write=False)
            object.__setattr__(self, "_labels", labels)
        object.__setattr__(self, "manifest", {**self.manifest, "checksum": self.checksum})

    def __len__(self) -> int:
        return len(self.images)

    @property
    def has_labels(self) -> bool:
        return self._labels is not None

    @property
    def labels(self) -> np.ndarray:
        if self._labels is None:
            raise ValidationError(f"{self.role} dataset has no labels")
        return self._labels

    @property
    def checksum(self) -> str:
        return array_checksum(self.images, self._labels)

    @property
    def dataset_id(self) -> str:
        return f"{self.role}-{self.checksum[:12]}"

    def with_role(self, role: str) -> "Dataset":
        return self.subset(np.arange(len(self)), role)

    def subset(self, indices: np.ndarray, role: str | None = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.images[indices],
            None if self._labels is None else self._labels[indices],
            self.num_classes,
            role or self.role,
            {k: v for k, v in self.manifest.items() if k != "checksum"},
        )


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    epochs: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValidationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")


def batches(dataset: Dataset, plan: BatchPlan) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (epoch, sample indices) for every batch of the plan.

    Each epoch is a seeded permutation cut into ceil(n / B) batches, the
    last one possibly short. The order depends only on the dataset checksum
    and the plan.
    """
    n = len(dataset)
    if plan.batch_size > n:
        raise ValidationError(f"batch size {plan.batch_size} exceeds dataset size {n}")
    base = checksum_seed(dataset.checksum)
    for epoch in range(plan.epochs):
        rng = np.random.default_rng([plan.seed, epoch, base])
        order = rng.permutation(n)
        for start in range(0, n, plan.batch_size):
            yield epoch, order[start:start + plan.batch_size]


def _grid() -> tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(IMAGE_SHAPE[1]) + 0.5) / IMAGE_SHAPE[1] - 0.5
    return np.meshgrid(coords, coords, indexing="ij")


def _grating(yy, xx, theta, freq, phase) -> np.ndarray:
    """(n, H, W) sinusoidal gratings for per-sample orientation, frequency and phase."""
    proj = np.cos(theta)[:, None, None] * xx + np.sin(theta)[:, None, None] * yy
    return np.sin(2 * np.pi * freq[:, None, None] * proj + phase[:, None, None])


def _smooth_noise(rng: np.random.Generator, n: int, cells: int) -> np.ndarray:
    """Blocky low-frequency noise upsampled to image size, shape (n, 3, H, W)."""
    coarse = rng.standard_normal((n, 3, cells, cells))
    factor = IMAGE_SHAPE[1] // cells
    return np.repeat(np.repeat(coarse, factor, axis=2), factor, axis=3)


def _textures(rng: np.random.Generator, theta: np.ndarray, palette: np.ndarray) -> np.ndarray:
    n = len(theta)
    yy, xx = _grid()
    freq = rng.uniform(2.0, 8.0, n)
    main = _grating(yy, xx, theta, freq, rng.uniform(0, 2 * np.pi, n))
    second = _grating(yy, xx, rng.uniform(0, np.pi, n), rng.uniform(1.0, 10.0, n), rng.uniform(0, 2 * np.pi, n))
    noise = _smooth_noise(rng, n, int(rng.choice([4, 8])))
    images = (
        0.5
        + 0.25 * main[:, None] * palette[:, :, None, None]
        + 0.1 * second[:, None]
        + 0.08 * noise
        + 0.03 * rng.standard_normal((n,) + IMAGE_SHAPE)
    )
    return np.clip(images, 0.0, 1.0)


def _balanced_labels(rng: np.random.Generator, n: int, num_classes: int) -> np.ndarray:
    return rng.permutation(np.arange(n) % num_classes)


def _generation_images(rng: np.random.Generator, n: int) -> np.ndarray:
    palette = rng.uniform(-1.0, 1.0, (n, 3))
    return _textures(rng, rng.uniform(0, np.pi, n), palette)


def _pretext_images(rng: np.random.Generator, labels: np.ndarray, num_classes: int, task_seed: int) -> np.ndarray:
    proto = np.random.default_rng([task_seed, 1])
    palettes = proto.uniform(-1.0, 1.0, (num_classes, 3))
    angles = np.pi * np.arange(num_classes) / num_classes
    theta = angles[labels] + rng.normal(0.0, 0.08, len(labels))
    palette = palettes[labels] + rng.normal(0.0, 0.1, (len(labels), 3))
    return _textures(rng, theta, palette)


def _task_images(rng: np.random.Generator, labels: np.ndarray, num_classes: int, task_seed: int) -> np.ndarray:
    """Shapes (disk, square, ring, cross) with class-specific tint and grating."""
    proto = np.random.default_rng([task_seed, 2])
    tints = proto.uniform(0.15, 0.85, (num_classes, 3))
    background = proto.uniform(0.2, 0.8, (num_classes, 3))
    freqs = proto.uniform(3.0, 9.0, num_classes)
    angles = proto.uniform(0, np.pi, num_classes)
    shapes = np.arange(num_classes) % 4

    n = len(labels)
    yy, xx = _grid()
    cy = rng.uniform(-0.12, 0.12, n)[:, None, None]
    cx = rng.uniform(-0.12, 0.12, n)[:, None, None]
    radius = rng.uniform(0.18, 0.28, n)[:, None, None]
    dy, dx = yy[None] - cy, xx[None] - cx
    dist = np.sqrt(dy ** 2 + dx ** 2)
    masks = np.stack(
        [
            dist <= radius,
            np.maximum(np.abs(dy), np.abs(dx)) <= radius * 0.85,
            (dist <= radius) & (dist >= radius * 0.55),
            (np.minimum(np.abs(dy), np.abs(dx)) <= radius * 0.3) & (np.maximum(np.abs(dy), np.abs(dx)) <= radius),
        ],
        axis=1,
    )
    mask = masks[np.arange(n), shapes[labels]].astype(np.float64)
    grating = _grating(yy, xx, angles[labels] + rng.normal(0, 0.05, n), freqs[labels], rng.uniform(0, 2 * np.pi, n))
    images = (
        background[labels][:, :, None, None] * (1 - mask[:, None])
        + tints[labels][:, :, None, None] * mask[:, None]
        + 0.12 * grating[:, None]
        + 0.05 * rng.standard_normal((n,) + IMAGE_SHAPE)
    )
    return np.clip(images, 0.0, 1.0)


def generate_synthetic(
    kind: str,
    num_classes: int,
    n: int,
    seed: int,
    task_seed: int | None = None,
) -> Dataset:
    """Deterministic synthetic dataset.

    ``seed`` drives the samples; ``task_seed`` (default: ``seed``) fixes the
    class prototypes, so train and test sets of one task share classes.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown dataset kind {kind!r}; known: {', '.join(KINDS)}")
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if kind != "generation":
        if num_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {num_classes}")
        if n < num_classes:
            raise ValidationError(f"n = {n} is smaller than the class count {num_classes}")
    task_seed = seed if task_seed is None else task_seed
    rng = np.random.default_rng([seed, KINDS.index(kind)])
    labels = None
    if kind == "generation":
        images = _generation_images(rng, n)
        num_classes = 0
    else:
        labels = _balanced_labels(rng, n, num_classes)
        make = _pretext_images if kind == "pretext" else _task_images
        images = make(rng, labels, num_classes, task_seed)
    manifest = {"kind": kind, "seed": seed, "task_seed": task_seed, "n": n, "classes": num_classes}
    dataset = Dataset(images.astype(np.float32), labels, num_classes, _KIND_ROLE[kind], manifest)
    logger.info("Generated %s dataset: n=%d classes=%d checksum=%s", kind, n, num_classes, dataset.checksum[:12])
    return dataset


def split_dataset(dataset: Dataset, n_test: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded split into (downstream-train, downstream-test)."""
    if not 0 < n_test < len(dataset):
        raise ValidationError(f"test size {n_test} must lie in 1..{len(dataset) - 1}")
    order = np.random.default_rng([seed, checksum_seed(dataset.checksum)]).permutation(len(dataset))
    test_idx, train_idx = np.sort(order[:n_test]), np.sort(order[n_test:])
    return dataset.subset(train_idx, "downstream-train"), dataset.subset(test_idx, "downstream-test")
