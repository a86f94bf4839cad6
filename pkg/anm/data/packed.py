"""ANMD packed dataset files.

Payload (little-endian) inside the shared checksummed container:

    role tag     u8   index into ROLES
    n            u32
    classes      u32
    height       u32
    width        u32
    has labels   u8
    images       f32 × n·3·height·width
    labels       u32 × n (when present)
    manifest     u32 length + JSON
"""

import json
import logging
from pathlib import Path

import numpy as np

from anm.data.datasets import IMAGE_SHAPE, ROLES, Dataset
from anm.errors import ArtifactFormatError, ValidationError
from anm.utils.binfmt import PayloadReader, PayloadWriter, read_container, write_container

logger = logging.getLogger(__name__)

MAGIC = b"ANMD"
VERSION = 1


def save_packed(dataset: Dataset, path: str | Path) -> Path:
    path = Path(path)
    out = PayloadWriter()
    out.u8(ROLES.index(dataset.role))
    out.u32(len(dataset))
    out.u32(dataset.num_classes)
    out.u32(IMAGE_SHAPE[1])
    out.u32(IMAGE_SHAPE[2])
    out.u8(1 if dataset.has_labels else 0)
    out.array(dataset.images, "f4")
    if dataset.has_labels:
        out.array(dataset.labels, "u4")
    manifest = {k: v for k, v in dataset.manifest.items() if k != "checksum"}
    out.string(json.dumps(manifest, sort_keys=True))
    size = write_container(path, MAGIC, VERSION, out.getvalue())
    logger.info("Saved %s dataset (n=%d) to %s (%d bytes)", dataset.role, len(dataset), path, size)
    return path


def load_packed(path: str | Path) -> Dataset:
    _, payload = read_container(path, MAGIC, VERSION)
    reader = PayloadReader(payload, str(path))
    tag = reader.u8()
    if tag >= len(ROLES):
        raise ArtifactFormatError(f"{path}: unknown role tag {tag}")
    n, classes, height, width = reader.u32(), reader.u32(), reader.u32(), reader.u32()
    if (height, width) != IMAGE_SHAPE[1:]:
        raise ArtifactFormatError(f"{path}: unsupported image size {height}x{width}")
    has_labels = reader.u8()
    images = reader.array("f4", (n,) + IMAGE_SHAPE)
    labels = reader.array("u4", (n,)).astype(np.int64) if has_labels else None
    manifest = json.loads(reader.string())
    reader.done()
    if labels is not None and n and labels.max() >= classes:
        raise ValidationError(
            f"{path}: header declares {classes} classes but labels reach {int(labels.max())}"
        )
    return Dataset(images, labels, classes, ROLES[tag], manifest)
