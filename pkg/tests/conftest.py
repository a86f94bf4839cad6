from pathlib import Path

import numpy as np
import pytest

from anm.attack.pgd import AttackConfig
from anm.config.config import DbSettings, LogSettings, PathSettings, Settings
from anm.data.datasets import generate_synthetic, split_dataset
from anm.netgraph.models import build_model
from anm.neuronlab.stats import Histogram, NeuronStats, collect_activations, neuron_stats
from anm.trainer.trainer import TrainConfig, finetune_head

CLASSES = 4


@pytest.fixture(scope="session")
def generation():
    return generate_synthetic("generation", 0, 24, seed=1)


@pytest.fixture(scope="session")
def pretext():
    return generate_synthetic("pretext", CLASSES, 24, seed=2)


@pytest.fixture(scope="session")
def task_split():
    task = generate_synthetic("task", CLASSES, 40, seed=3)
    return split_dataset(task, 16, seed=3)


@pytest.fixture(scope="session")
def resnet():
    return build_model("smallresnet", 0, num_classes=CLASSES)


@pytest.fixture(scope="session")
def vgg():
    return build_model("smallvgg", 0, num_classes=CLASSES)


@pytest.fixture(scope="session")
def head_config():
    return TrainConfig(lr=1e-2, epochs=2, batch_size=8, freeze="extractor-frozen")


@pytest.fixture(scope="session")
def victim(resnet, task_split, head_config):
    train, _ = task_split
    return finetune_head(resnet, train, head_config)


@pytest.fixture(scope="session")
def acts(resnet, generation):
    return collect_activations(resnet, generation)


@pytest.fixture(scope="session")
def stats(acts):
    return neuron_stats(acts)


@pytest.fixture
def quick_attack():
    return AttackConfig(epochs=2, batch_size=8, k_neurons=3, seed=0)


@pytest.fixture
def settings(tmp_path: Path) -> Settings:
    artifacts = tmp_path / "artifacts"
    return Settings(
        paths=PathSettings(artifact_dir=artifacts),
        logging=LogSettings(path=artifacts / "anm.log", level="INFO"),
        db=DbSettings(url=f"sqlite+aiosqlite:///{artifacts / 'anm.db'}"),
        workers=1,
    )


def make_stats(mean, std) -> NeuronStats:
    """Statistics with given μ and σ, for oracle checks that need no model."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    zeros = np.zeros_like(mean)
    return NeuronStats(
        mean=mean,
        std=std,
        skewness=zeros,
        kurtosis=zeros,
        mean_histogram=Histogram.of(mean),
        variance_histogram=Histogram.of(std ** 2),
        n=2,
    )


def naive_conv2d(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """NCHW convolution by an explicit loop over output positions, in float64."""
    x = np.pad(np.asarray(x, dtype=np.float64), ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    w = np.asarray(w, dtype=np.float64)
    kh, kw = w.shape[2:]
    ho = (x.shape[2] - kh) // stride + 1
    wo = (x.shape[3] - kw) // stride + 1
    out = np.zeros((x.shape[0], w.shape[0], ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = x[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            out[:, :, i, j] = np.einsum("nchw,ochw->no", patch, w)
    return out
