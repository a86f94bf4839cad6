"""Immutable tensors and the symbolic graph nodes that reference them."""

from __future__ import annotations

import itertools
from types import MappingProxyType
from typing import Any, Mapping, Sequence

import numpy as np

# Closed operator set understood by the tape
OP_KINDS = frozenset(
    {
        "input",
        "add",
        "scale",
        "matmul",
        "conv2d",
        "relu",
        "batchnorm",
        "maxpool2d",
        "globalavgpool",
        "flatten",
        "softmax-cross-entropy",
        "squared-error",
        "mean-reduce",
        "index-select",
        "clamp",
    }
)

_ids = itertools.count()


def _as_array(data: Any, dtype: Any) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is None:
        if arr.dtype == np.bool_ or np.issubdtype(arr.dtype, np.integer):
            dtype = np.int64
        else:
            dtype = np.float32
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


class Tensor:
    """Dense row-major array with a gradient flag.

    Data is copied on construction and marked read-only, so tensors can be
    shared between concurrent readers. Floating data defaults to 32-bit;
    pass ``dtype=np.float64`` for oracle computations.
    """

    __slots__ = ("data", "requires_grad", "meta")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: Any = None,
        meta: Mapping[str, Any] | None = None,
    ) -> None:
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.meta = MappingProxyType(dict(meta or {}))

    @classmethod
    def wrap(cls, value: "Tensor | np.ndarray | Any", requires_grad: bool = False) -> "Tensor":
        if isinstance(value, Tensor):
            return value
        return cls(value, requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_float(self) -> bool:
        return np.issubdtype(self.data.dtype, np.floating)

    def numpy(self) -> np.ndarray:
        """Writable copy of the data."""
        return self.data.copy()

    def item(self) -> float:
        return self.data.item()

    def astype(self, dtype: Any) -> "Tensor":
        return Tensor(self.data, requires_grad=self.requires_grad, dtype=dtype, meta=self.meta)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class OpNode:
    """One operation of a symbolic computation graph.

    ``input`` nodes are named placeholders bound at evaluation time; every
    other node applies an operator from ``OP_KINDS`` to its input nodes.
    """

    __slots__ = ("kind", "inputs", "attrs", "name", "uid")

    def __init__(
        self,
        kind: str,
        inputs: Sequence["OpNode"] = (),
        attrs: Mapping[str, Any] | None = None,
        name: str | None = None,
    ) -> None:
        if kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {kind!r}")
        self.kind = kind
        self.inputs = tuple(inputs)
        self.attrs = dict(attrs or {})
        self.name = name
        self.uid = next(_ids)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<OpNode {self.kind}{label} #{self.uid}>"


def topological_order(root: OpNode) -> list[OpNode]:
    """Post-order of the nodes reachable from root, inputs first."""
    order: list[OpNode] = []
    visited: set[int] = set()
    stack: list[tuple[OpNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if node.uid in visited:
            continue
        if expanded:
            visited.add(node.uid)
            order.append(node)
            continue
        stack.append((node, True))
        for parent in reversed(node.inputs):
            if parent.uid not in visited:
                stack.append((parent, False))
    return order

