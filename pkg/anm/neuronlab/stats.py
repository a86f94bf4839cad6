"""Activation samples of the feature neurons and their per-neuron statistics."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from anm.data.datasets import Dataset
from anm.errors import MissingArtifactError, NumericalError, ValidationError
from anm.filters.filters import IsNonEmpty, IsRole, ensure
from anm.netgraph.models import ModelGraph, extract_features

logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 20
STATS_SCHEMA = 1
STATS_COLUMNS = ("neuron", "mean", "std", "skewness", "kurtosis")


@dataclass(frozen=True, eq=False)
class ActivationMatrix:
    """n samples × d neurons, 64-bit, with the ids of its sources."""

    values: np.ndarray
    model_id: str
    dataset_checksum: str

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise ValidationError(f"activation matrix must be 2-D, got shape {values.shape}")
        if values.shape[0] < 2:
            raise ValidationError(f"statistics need at least 2 samples, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise NumericalError("activation matrix has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Histogram:
    edges: tuple[float, ...]
    counts: tuple[int, ...]

    @classmethod
    def of(cls, values: np.ndarray, bins: int = HISTOGRAM_BINS) -> "Histogram":
        counts, edges = np.histogram(values, bins=bins)
        return cls(tuple(float(e) for e in edges), tuple(int(c) for c in counts))


@dataclass(frozen=True, eq=False)
class NeuronStats:
    """Per-neuron μ and σ (divisor n), with normality diagnostics.

    ``skewness`` and ``kurtosis`` (excess) are per neuron; the two
    histograms summarize the spread of μ and σ² across neurons.
    """

    mean: np.ndarray
    std: np.ndarray
    skewness: np.ndarray
    kurtosis: np.ndarray
    mean_histogram: Histogram
    variance_histogram: Histogram
    model_id: str = ""
    n: int = 0

    @property
    def d(self) -> int:
        return len(self.mean)

    def rows(self) -> list[dict]:
        return [
            {
                "neuron": j,
                "mean": float(self.mean[j]),
                "std": float(self.std[j]),
                "skewness": float(self.skewness[j]),
                "kurtosis": float(self.kurtosis[j]),
            }
            for j in range(self.d)
        ]


def collect_activations(model: ModelGraph, dataset: Dataset, batch_size: int = 256) -> ActivationMatrix:
    """Feature vectors of every generation sample, stacked row by row."""
    ensure(IsRole("generation"), dataset)
    ensure(IsNonEmpty(2), dataset)
    values = extract_features(model, dataset.images, batch_size).astype(np.float64)
    logger.info("Collected %d × %d activations of %s", values.shape[0], values.shape[1], model.model_id)
    return ActivationMatrix(values, model.model_id, dataset.checksum)


def neuron_stats(acts: ActivationMatrix) -> NeuronStats:
    # two-pass: centre first, then accumulate moments
    values = acts.values
    mean = values.mean(axis=0)
    centred = values - mean
    var = (centred ** 2).mean(axis=0)
    std = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        skewness = np.where(var > 0, (centred ** 3).mean(axis=0) / var ** 1.5, 0.0)
        kurtosis = np.where(var > 0, (centred ** 4).mean(axis=0) / var ** 2 - 3.0, 0.0)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
        raise NumericalError("neuron statistics are not finite")
    return NeuronStats(
        mean=mean,
        std=std,
        skewness=skewness,
        kurtosis=kurtosis,
        mean_histogram=Histogram.of(mean),
        variance_histogram=Histogram.of(var),
        model_id=acts.model_id,
        n=acts.n,
    )


def export_stats(stats: NeuronStats, path: str | Path) -> Path:
    """Writes per-neuron rows as CSV, or rows plus histograms as JSON (by suffix)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".json":
        document = {
            "schema": STATS_SCHEMA,
            "model_id": stats.model_id,
            "n": stats.n,
            "neurons": stats.rows(),
            "mean_histogram": {"edges": stats.mean_histogram.edges, "counts": stats.mean_histogram.counts},
            "variance_histogram": {
                "edges": stats.variance_histogram.edges,
                "counts": stats.variance_histogram.counts,
            },
        }
        path.write_text(json.dumps(document, indent=2), encoding="utf-8")
    else:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=STATS_COLUMNS)
            writer.writeheader()
            writer.writerows(stats.rows())
    logger.info("Wrote neuron statistics to %s", path)
    return path


def load_stats(path: str | Path) -> NeuronStats:
    """Reads statistics written by ``export_stats`` in JSON form."""
    path = Path(path)
    if path.suffix != ".json":
        raise ValidationError(f"{path}: statistics can only be reloaded from JSON")
    if not path.exists():
        raise MissingArtifactError(str(path))
    document = json.loads(path.read_text(encoding="utf-8"))
    rows = document["neurons"]

    def column(key: str) -> np.ndarray:
        return np.array([row[key] for row in rows], dtype=np.float64)

    return NeuronStats(
        mean=column("mean"),
        std=column("std"),
        skewness=column("skewness"),
        kurtosis=column("kurtosis"),
        mean_histogram=Histogram(**{k: tuple(v) for k, v in document["mean_histogram"].items()}),
        variance_histogram=Histogram(**{k: tuple(v) for k, v in document["variance_histogram"].items()}),
        model_id=document["model_id"],
        n=document["n"],
    )
