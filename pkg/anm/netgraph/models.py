"""Desk-scale model architectures with an extractor/head split.

Two stand-in backbones ship: ``smallresnet`` (stem conv plus two residual
stages) and ``smallvgg`` (four conv-bn-relu layers with pooling). Both end
their extractor with global average pooling and flatten, producing a
feature vector of length ``feature_dim`` per sample. Neurons are addressed
as indices into that vector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Iterator, Mapping

import numpy as np

from anm.errors import ShapeError, ValidationError
from anm.tensor import graph as g
from anm.tensor.tape import Tape
from anm.tensor.tensor import OpNode, Tensor
from anm.utils.helpers import array_checksum, short_hash

logger = logging.getLogger(__name__)

INPUT_SHAPE = (3, 32, 32)
DEFAULT_FEATURE_DIM = 64
DEFAULT_NUM_CLASSES = 8
INPUT_NAME = "x"
FEATURES_NAME = "features"


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a model.

    kind is one of ``conv``, ``residual``, ``maxpool``, ``gap``, ``flatten``,
    ``linear``. ``channels`` is the output channel (or feature) count.
    """

    kind: str
    name: str
    channels: int = 0
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    batchnorm: bool = False
    relu: bool = False

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        if self.kind in ("conv", "residual"):
            c, h, w = in_shape
            kernel, padding = (3, 1) if self.kind == "residual" else (self.kernel, self.padding)
            ho = (h + 2 * padding - kernel) // self.stride + 1
            wo = (w + 2 * padding - kernel) // self.stride + 1
            if ho < 1 or wo < 1:
                raise ShapeError(self.kind, [in_shape], f"layer {self.name} collapses spatial extent")
            return (self.channels, ho, wo)
        if self.kind == "maxpool":
            c, h, w = in_shape
            return (c, h // self.kernel, w // self.kernel)
        if self.kind == "gap":
            return (in_shape[0], 1, 1)
        if self.kind == "flatten":
            return (int(np.prod(in_shape)),)
        if self.kind == "linear":
            return (self.channels,)
        raise ValidationError(f"unknown layer kind {self.kind!r}")

    def param_shapes(self, in_shape: tuple[int, ...]) -> dict[str, tuple[int, ...]]:
        """Trainable parameters and batchnorm buffers this layer owns."""
        shapes: dict[str, tuple[int, ...]] = {}
        if self.kind == "conv":
            shapes[f"{self.name}.weight"] = (self.channels, in_shape[0], self.kernel, self.kernel)
            if self.batchnorm:
                shapes.update(_bn_shapes(f"{self.name}.bn", self.channels))
            else:
                shapes[f"{self.name}.bias"] = (self.channels, 1, 1)
        elif self.kind == "residual":
            cin, cout = in_shape[0], self.channels
            shapes[f"{self.name}.conv1.weight"] = (cout, cin, 3, 3)
            shapes.update(_bn_shapes(f"{self.name}.bn1", cout))
            shapes[f"{self.name}.conv2.weight"] = (cout, cout, 3, 3)
            shapes.update(_bn_shapes(f"{self.name}.bn2", cout))
            if self.stride != 1 or cin != cout:
                shapes[f"{self.name}.proj.weight"] = (cout, cin, 1, 1)
                shapes.update(_bn_shapes(f"{self.name}.proj_bn", cout))
        elif self.kind == "linear":
            shapes[f"{self.name}.weight"] = (self.channels, in_shape[0])
            shapes[f"{self.name}.bias"] = (self.channels,)
        return shapes


def _bn_shapes(prefix: str, channels: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.gamma": (channels,),
        f"{prefix}.beta": (channels,),
        f"{prefix}.running_mean": (channels,),
        f"{prefix}.running_var": (channels,),
    }


def is_buffer(name: str) -> bool:
    return name.endswith(".running_mean") or name.endswith(".running_var")


def _smallresnet_layers(feature_dim: int) -> list[LayerSpec]:
    return [
        LayerSpec("conv", "stem", channels=16, kernel=3, stride=1, padding=1, batchnorm=True, relu=True),
        LayerSpec("residual", "stage1", channels=32, stride=2),
        LayerSpec("residual", "stage2", channels=feature_dim, stride=2),
        LayerSpec("gap", "pool"),
        LayerSpec("flatten", "flatten"),
    ]


def _smallresnet_head(feature_dim: int, num_classes: int) -> list[LayerSpec]:
    return [LayerSpec("linear", "fc", channels=num_classes)]


def _smallvgg_layers(feature_dim: int) -> list[LayerSpec]:
    return [
        LayerSpec("conv", "conv1", channels=16, batchnorm=True, relu=True),
        LayerSpec("maxpool", "pool1", kernel=2),
        LayerSpec("conv", "conv2", channels=32, batchnorm=True, relu=True),
        LayerSpec("maxpool", "pool2", kernel=2),
        LayerSpec("conv", "conv3", channels=64, batchnorm=True, relu=True),
        LayerSpec("maxpool", "pool3", kernel=2),
        LayerSpec("conv", "conv4", channels=feature_dim, batchnorm=True, relu=True),
        LayerSpec("gap", "gap"),
        LayerSpec("flatten", "flatten"),
    ]


def _smallvgg_head(feature_dim: int, num_classes: int) -> list[LayerSpec]:
    return [
        LayerSpec("linear", "fc1", channels=32, relu=True),
        LayerSpec("linear", "fc2", channels=num_classes),
    ]


ARCHITECTURES: dict[str, tuple[Callable[[int], list[LayerSpec]], Callable[[int, int], list[LayerSpec]]]] = {
    "smallresnet": (_smallresnet_layers, _smallresnet_head),
    "smallvgg": (_smallvgg_layers, _smallvgg_head),
}


def shape_walk(layers: list[LayerSpec] | tuple[LayerSpec, ...], in_shape: tuple[int, ...]) -> Iterator[tuple[LayerSpec, tuple[int, ...]]]:
    """Yield (layer, input shape) pairs without running any data."""
    shape = in_shape
    for layer in layers:
        yield layer, shape
        shape = layer.output_shape(shape)


@dataclass(frozen=True, eq=False)
class ModelGraph:
    """Layer list, parameters and the extractor/head split of one model.

    The first ``split_index`` layers form the feature extractor f_p; the
    rest is the classification head. Arrays are read-only; training
    produces a new instance via ``with_arrays``.
    """

    arch: str
    layers: tuple[LayerSpec, ...]
    split_index: int
    arrays: Mapping[str, np.ndarray]
    frozen: frozenset[str] = frozenset()
    feature_dim: int = DEFAULT_FEATURE_DIM
    num_classes: int = DEFAULT_NUM_CLASSES
    input_shape: tuple[int, int, int] = INPUT_SHAPE
    _graphs: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        for arr in self.arrays.values():
            arr.setflags(write=False)

    @property
    def extractor_layers(self) -> tuple[LayerSpec, ...]:
        return self.layers[: self.split_index]

    @property
    def head_layers(self) -> tuple[LayerSpec, ...]:
        return self.layers[self.split_index:]

    def _names_of(self, layers: tuple[LayerSpec, ...], in_shape: tuple[int, ...]) -> list[str]:
        names: list[str] = []
        for layer, shape in shape_walk(layers, in_shape):
            names.extend(layer.param_shapes(shape))
        return names

    @property
    def extractor_names(self) -> list[str]:
        return self._names_of(self.extractor_layers, self.input_shape)

    @property
    def head_names(self) -> list[str]:
        return self._names_of(self.head_layers, (self.feature_dim,))

    @property
    def param_names(self) -> list[str]:
        return [n for n in self.extractor_names + self.head_names if not is_buffer(n)]

    def parameter_count(self) -> int:
        return int(sum(self.arrays[n].size for n in self.param_names))

    def checksum(self) -> str:
        names = sorted(self.arrays)
        return array_checksum(*(self.arrays[n] for n in names))

    def extractor_checksum(self) -> str:
        names = self.extractor_names
        return array_checksum(*(self.arrays[n] for n in names))

    @property
    def model_id(self) -> str:
        return f"{self.arch}-{short_hash(self.checksum())}"

    def with_arrays(self, updates: Mapping[str, np.ndarray], **changes: Any) -> "ModelGraph":
        arrays = dict(self.arrays)
        for name, value in updates.items():
            arrays[name] = np.array(value, dtype=np.float32, copy=True)
        return replace(self, arrays=arrays, _graphs={}, **changes)

    def freeze_extractor(self) -> "ModelGraph":
        return replace(self, frozen=frozenset(self.extractor_names), _graphs={})

    def bindings(self, trainable: bool = False) -> dict[str, Tensor]:
        """Named tensors for every parameter and buffer.

        With ``trainable`` set, non-frozen parameters are bound with
        ``requires_grad`` so the tape reports their gradients.
        """
        return {
            name: Tensor(
                arr,
                requires_grad=trainable and name not in self.frozen and not is_buffer(name),
            )
            for name, arr in self.arrays.items()
        }

    def extractor_graph(self, training: bool = False, source: OpNode | None = None) -> OpNode:
        """Symbolic extractor output (batch, feature_dim) fed by ``source`` or placeholder ``x``."""
        if source is None:
            key = ("extractor", training)
            if key not in self._graphs:
                self._graphs[key] = build_layers(
                    self.extractor_layers, g.placeholder(INPUT_NAME), self.input_shape, training
                )
            return self._graphs[key]
        return build_layers(self.extractor_layers, source, self.input_shape, training)

    def head_graph(self, source: OpNode | None = None) -> OpNode:
        if source is None:
            key = ("head",)
            if key not in self._graphs:
                self._graphs[key] = build_layers(
                    self.head_layers, g.placeholder(FEATURES_NAME), (self.feature_dim,), False
                )
            return self._graphs[key]
        return build_layers(self.head_layers, source, (self.feature_dim,), False)

    def full_graph(self, training: bool = False) -> OpNode:
        key = ("full", training)
        if key not in self._graphs:
            self._graphs[key] = self.head_graph(self.extractor_graph(training))
        return self._graphs[key]


def _bn(node: OpNode, prefix: str, training: bool) -> OpNode:
    return g.batchnorm(
        node,
        g.placeholder(f"{prefix}.gamma"),
        g.placeholder(f"{prefix}.beta"),
        g.placeholder(f"{prefix}.running_mean"),
        g.placeholder(f"{prefix}.running_var"),
        training=training,
        name=prefix,
    )


def build_layers(
    layers: tuple[LayerSpec, ...] | list[LayerSpec], source: OpNode, in_shape: tuple[int, ...], training: bool
) -> OpNode:
    node = source
    for layer, shape in shape_walk(layers, in_shape):
        if layer.kind == "conv":
            node = g.conv2d(node, g.placeholder(f"{layer.name}.weight"), layer.stride, layer.padding)
            if layer.batchnorm:
                node = _bn(node, f"{layer.name}.bn", training)
            else:
                bias = g.placeholder(f"{layer.name}.bias")
                node = g.add(node, bias)
            if layer.relu:
                node = g.relu(node)
        elif layer.kind == "residual":
            p = layer.name
            main = g.conv2d(node, g.placeholder(f"{p}.conv1.weight"), layer.stride, 1)
            main = g.relu(_bn(main, f"{p}.bn1", training))
            main = g.conv2d(main, g.placeholder(f"{p}.conv2.weight"), 1, 1)
            main = _bn(main, f"{p}.bn2", training)
            shortcut = node
            if layer.stride != 1 or shape[0] != layer.channels:
                shortcut = g.conv2d(node, g.placeholder(f"{p}.proj.weight"), layer.stride, 0)
                shortcut = _bn(shortcut, f"{p}.proj_bn", training)
            node = g.relu(g.add(main, shortcut))
        elif layer.kind == "maxpool":
            node = g.maxpool2d(node, layer.kernel)
        elif layer.kind == "gap":
            node = g.global_avg_pool(node)
        elif layer.kind == "flatten":
            node = g.flatten(node)
        elif layer.kind == "linear":
            node = g.matmul(node, g.placeholder(f"{layer.name}.weight"), transpose_b=True)
            node = g.add(node, g.placeholder(f"{layer.name}.bias"))
            if layer.relu:
                node = g.relu(node)
        else:
            raise ValidationError(f"unknown layer kind {layer.kind!r}")
    return node


def init_arrays(
    layers: tuple[LayerSpec, ...] | list[LayerSpec], in_shape: tuple[int, ...], rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """He-normal weights, zero biases, identity batchnorm."""
    arrays: dict[str, np.ndarray] = {}
    for layer, shape in shape_walk(layers, in_shape):
        for name, pshape in layer.param_shapes(shape).items():
            if name.endswith(".weight"):
                fan_in = int(np.prod(pshape[1:]))
                arr = rng.standard_normal(pshape) * np.sqrt(2.0 / fan_in)
            elif name.endswith(".gamma") or name.endswith(".running_var"):
                arr = np.ones(pshape)
            else:
                arr = np.zeros(pshape)
            arrays[name] = arr.astype(np.float32)
    return arrays


def build_model(
    arch: str,
    seed: int,
    num_classes: int = DEFAULT_NUM_CLASSES,
    feature_dim: int = DEFAULT_FEATURE_DIM,
) -> ModelGraph:
    """Randomly initialized model, deterministic given (arch, seed)."""
    if arch not in ARCHITECTURES:
        raise ValidationError(f"unknown architecture {arch!r}; known: {', '.join(sorted(ARCHITECTURES))}")
    extractor_fn, head_fn = ARCHITECTURES[arch]
    extractor = extractor_fn(feature_dim)
    head = head_fn(feature_dim, num_classes)
    rng = np.random.default_rng(seed)
    arrays = init_arrays(extractor, INPUT_SHAPE, rng)
    arrays.update(init_arrays(head, (feature_dim,), rng))
    model = ModelGraph(
        arch=arch,
        layers=tuple(extractor + head),
        split_index=len(extractor),
        arrays=arrays,
        feature_dim=feature_dim,
        num_classes=num_classes,
    )
    logger.info("Built %s (seed %d, %d parameters, d=%d)", arch, seed, model.parameter_count(), feature_dim)
    return model


def with_new_head(model: ModelGraph, num_classes: int, seed: int) -> ModelGraph:
    """Same extractor, freshly initialized head with ``num_classes`` outputs."""
    _, head_fn = ARCHITECTURES[model.arch]
    head = head_fn(model.feature_dim, num_classes)
    keep = set(model.extractor_names)
    arrays = {n: a for n, a in model.arrays.items() if n in keep}
    arrays.update(init_arrays(head, (model.feature_dim,), np.random.default_rng(seed)))
    return ModelGraph(
        arch=model.arch,
        layers=model.extractor_layers + tuple(head),
        split_index=model.split_index,
        arrays=arrays,
        frozen=model.frozen,
        feature_dim=model.feature_dim,
        num_classes=num_classes,
        input_shape=model.input_shape,
    )


def _check_batch(model: ModelGraph, batch: np.ndarray) -> None:
    if batch.ndim != 4 or tuple(batch.shape[1:]) != model.input_shape:
        raise ShapeError("input", [batch.shape], f"expected (N, {', '.join(map(str, model.input_shape))})")


def _as_batch(batch: Tensor | np.ndarray) -> np.ndarray:
    return batch.data if isinstance(batch, Tensor) else np.asarray(batch)


def feature_vector(model: ModelGraph, batch: Tensor | np.ndarray, dtype: Any = np.float32) -> Tensor:
    """Extractor output (batch × d); the head is not executed."""
    data = _as_batch(batch)
    _check_batch(model, data)
    inputs = model.bindings()
    inputs[INPUT_NAME] = Tensor(data, dtype=dtype)
    return Tape(dtype).evaluate(model.extractor_graph(), inputs)


def check_neurons(model: ModelGraph, neurons: Iterable[int]) -> tuple[int, ...]:
    checked = tuple(int(j) for j in neurons)
    for j in checked:
        if not 0 <= j < model.feature_dim:
            raise ValidationError(f"neuron {j} out of range [0, {model.feature_dim})")
    return checked


def neuron_graph(model: ModelGraph, neurons: Iterable[int], source: OpNode | None = None) -> OpNode:
    """Symbolic (batch, len(neurons)) activations of the selected feature neurons."""
    return g.index_select(model.extractor_graph(source=source), check_neurons(model, neurons))


def neuron_activation(model: ModelGraph, batch: Tensor | np.ndarray, neuron: int) -> Tensor:
    """Column ``neuron`` of the feature vector, one scalar per sample."""
    check_neurons(model, [neuron])
    data = _as_batch(batch)
    _check_batch(model, data)
    inputs = model.bindings()
    inputs[INPUT_NAME] = Tensor(data)
    out = Tape().evaluate(neuron_graph(model, [neuron]), inputs)
    return Tensor(out.data[:, 0])


def head_forward(model: ModelGraph, features: Tensor | np.ndarray) -> Tensor:
    inputs = model.bindings()
    inputs[FEATURES_NAME] = Tensor.wrap(features)
    return Tape().evaluate(model.head_graph(), inputs)


def forward(model: ModelGraph, batch: Tensor | np.ndarray) -> Tensor:
    """Full forward pass (inference mode) returning logits."""
    data = _as_batch(batch)
    _check_batch(model, data)
    inputs = model.bindings()
    inputs[INPUT_NAME] = Tensor(data)
    return Tape().evaluate(model.full_graph(), inputs)


def predict(model: ModelGraph, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class ids (ties resolve to the lowest index)."""
    preds = [
        forward(model, images[start:start + batch_size]).data.argmax(axis=1)
        for start in range(0, len(images), batch_size)
    ]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def extract_features(model: ModelGraph, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    chunks = [
        feature_vector(model, images[start:start + batch_size]).data
        for start in range(0, len(images), batch_size)
    ]
    return np.concatenate(chunks) if chunks else np.zeros((0, model.feature_dim), dtype=np.float32)
