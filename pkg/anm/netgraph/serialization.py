"""ANMF weight files.

Payload (little-endian) inside the shared checksummed container:

    arch id          u32 length + UTF-8
    split index      u32
    feature dim      u32
    class count      u32
    layer specs      u32 length + JSON list
    tensor count     u32
    per tensor:      name (u32 length + UTF-8), flags u8 (bit 0 frozen),
                     rank u8, extents u32 × rank, f32 row-major data

Tensors are written in sorted name order, so equal models serialize to
identical bytes.
"""

import json
import logging
from dataclasses import asdict
from pathlib import Path

from anm.errors import ArtifactFormatError
from anm.netgraph.models import LayerSpec, ModelGraph
from anm.utils.binfmt import PayloadReader, PayloadWriter, read_container, write_container

logger = logging.getLogger(__name__)

MAGIC = b"ANMF"
VERSION = 1
FLAG_FROZEN = 0x01


def encode_model(model: ModelGraph) -> bytes:
    out = PayloadWriter()
    out.string(model.arch)
    out.u32(model.split_index)
    out.u32(model.feature_dim)
    out.u32(model.num_classes)
    out.string(json.dumps([asdict(layer) for layer in model.layers], sort_keys=True))
    names = sorted(model.arrays)
    out.u32(len(names))
    for name in names:
        out.string(name)
        out.u8(FLAG_FROZEN if name in model.frozen else 0)
        out.tensor(model.arrays[name])
    return out.getvalue()


def save_model(model: ModelGraph, path: str | Path) -> Path:
    path = Path(path)
    size = write_container(path, MAGIC, VERSION, encode_model(model))
    logger.info("Saved model %s to %s (%d bytes)", model.model_id, path, size)
    return path


def load_model(path: str | Path) -> ModelGraph:
    _, payload = read_container(path, MAGIC, VERSION)
    reader = PayloadReader(payload, str(path))
    arch = reader.string()
    split_index = reader.u32()
    feature_dim = reader.u32()
    num_classes = reader.u32()
    try:
        layers = tuple(LayerSpec(**spec) for spec in json.loads(reader.string()))
    except (TypeError, ValueError) as exc:
        raise ArtifactFormatError(f"{path}: bad layer block ({exc})") from exc
    arrays, frozen = {}, set()
    for _ in range(reader.u32()):
        name = reader.string()
        flags = reader.u8()
        arrays[name] = reader.tensor()
        if flags & FLAG_FROZEN:
            frozen.add(name)
    reader.done()
    if not 0 < split_index <= len(layers):
        raise ArtifactFormatError(f"{path}: split index {split_index} outside 1..{len(layers)}")
    model = ModelGraph(
        arch=arch,
        layers=layers,
        split_index=split_index,
        arrays=arrays,
        frozen=frozenset(frozen),
        feature_dim=feature_dim,
        num_classes=num_classes,
    )
    missing = set(model.extractor_names + model.head_names) - set(arrays)
    if missing:
        raise ArtifactFormatError(f"{path}: missing tensors {sorted(missing)}")
    logger.debug("Loaded model %s from %s", model.model_id, path)
    return model
