"""Universal perturbations: application, the noise baseline and ANMP files.

ANMP payload (little-endian) inside the shared checksummed container:

    epsilon      f32 budget the perturbation was crafted under
    delta        rank u8, extents u32 × rank, f32 row-major data
    provenance   u32 length + UTF-8 JSON
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from anm.errors import ArtifactFormatError, ShapeError, ValidationError
from anm.filters.filters import WithinBudget, ensure
from anm.netgraph.models import INPUT_SHAPE
from anm.utils.binfmt import PayloadReader, PayloadWriter, read_container, write_container

logger = logging.getLogger(__name__)

MAGIC = b"ANMP"
VERSION = 1
VISUAL_GAIN = 10.0


@dataclass(frozen=True, eq=False)
class Perturbation:
    """δ shaped like one input image, with |δ| ≤ ε componentwise."""

    delta: np.ndarray
    epsilon: float
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        delta = np.array(self.delta, dtype=np.float32, copy=True)
        if delta.shape != INPUT_SHAPE:
            raise ShapeError("perturbation", [delta.shape], f"expected {INPUT_SHAPE}")
        if not self.epsilon >= 0:
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon}")
        ensure(WithinBudget(self.epsilon), delta)
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)

    @property
    def method(self) -> str:
        return self.provenance.get("method", "")

    @property
    def neurons(self) -> tuple[int, ...]:
        return tuple(self.provenance.get("neurons", ()))

    @property
    def final_loss(self) -> float | None:
        return self.provenance.get("final_loss")

    def linf(self) -> float:
        return float(np.abs(self.delta).max())


def budget_bound(epsilon: float) -> np.float32:
    """Largest float32 value that does not exceed ε."""
    bound = np.float32(epsilon)
    if float(bound) > epsilon:
        bound = np.nextafter(bound, np.float32(0))
    return bound


def project_linf(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Componentwise clamp to [−ε, ε]."""
    bound = budget_bound(epsilon)
    return np.clip(delta, -bound, bound).astype(np.float32, copy=False)


def apply(delta: Perturbation | np.ndarray, images: np.ndarray) -> np.ndarray:
    """x* = clamp(x + δ, 0, 1) for one image or a batch."""
    if isinstance(delta, Perturbation):
        delta = delta.delta
    images = np.asarray(images, dtype=np.float32)
    if images.shape[-3:] != delta.shape or images.ndim not in (3, 4):
        raise ShapeError("apply", [delta.shape, images.shape], "perturbation and image shapes differ")
    return np.clip(images + delta, 0.0, 1.0).astype(np.float32)


def uniform_noise(epsilon: float, seed: int, shape: tuple[int, ...] = INPUT_SHAPE) -> Perturbation:
    """Baseline δ ~ U[−ε, ε] at the same budget as the crafted attacks."""
    rng = np.random.default_rng([seed, 0xA0])
    delta = project_linf(rng.uniform(-epsilon, epsilon, shape).astype(np.float32), epsilon)
    return Perturbation(
        delta,
        epsilon,
        {"method": "uniform-noise", "seed": seed, "neurons": [], "epsilon": epsilon},
    )


def encode_perturbation(perturbation: Perturbation) -> bytes:
    out = PayloadWriter()
    out.array(np.array([perturbation.epsilon]), "<f4")
    out.tensor(perturbation.delta)
    out.string(json.dumps(perturbation.provenance, sort_keys=True))
    return out.getvalue()


def save_perturbation(perturbation: Perturbation, path: str | Path) -> Path:
    path = Path(path)
    size = write_container(path, MAGIC, VERSION, encode_perturbation(perturbation))
    logger.info("Saved %s perturbation to %s (%d bytes)", perturbation.method or "unnamed", path, size)
    return path


def load_perturbation(path: str | Path) -> Perturbation:
    _, payload = read_container(path, MAGIC, VERSION)
    reader = PayloadReader(payload, str(path))
    epsilon = float(reader.array("<f4", (1,))[0])
    delta = reader.tensor()
    try:
        provenance = json.loads(reader.string())
    except ValueError as exc:
        raise ArtifactFormatError(f"{path}: bad provenance block ({exc})") from exc
    reader.done()
    # the exact budget lives in the provenance; the header copy is rounded to f32
    epsilon = float(provenance.get("epsilon", epsilon))
    return Perturbation(delta, epsilon, provenance)


def export_visual(perturbation: Perturbation, path: str | Path, gain: float = VISUAL_GAIN) -> Path:
    """Saves clip(0.5 + gain·δ, 0, 1) as an .npy array for plotting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image = np.clip(0.5 + gain * perturbation.delta, 0.0, 1.0).astype(np.float32)
    np.save(path, image)
    logger.info("Exported perturbation visual to %s (gain %g)", path, gain)
    return path
