"""Builders for symbolic graphs over the closed operator set."""

from __future__ import annotations

from typing import Sequence

from anm.tensor.tensor import OpNode


def placeholder(name: str) -> OpNode:
    return OpNode("input", name=name)


def add(a: OpNode, b: OpNode) -> OpNode:
    return OpNode("add", (a, b))


def scale(a: OpNode, factor: float) -> OpNode:
    return OpNode("scale", (a,), {"factor": float(factor)})


def matmul(a: OpNode, b: OpNode, transpose_b: bool = False) -> OpNode:
    return OpNode("matmul", (a, b), {"transpose_b": transpose_b})


def conv2d(x: OpNode, weight: OpNode, stride: int = 1, padding: int = 0) -> OpNode:
    return OpNode("conv2d", (x, weight), {"stride": int(stride), "padding": int(padding)})


def relu(a: OpNode) -> OpNode:
    return OpNode("relu", (a,))


def batchnorm(
    x: OpNode,
    gamma: OpNode,
    beta: OpNode,
    running_mean: OpNode,
    running_var: OpNode,
    training: bool = False,
    eps: float = 1e-5,
    name: str | None = None,
) -> OpNode:
    return OpNode(
        "batchnorm",
        (x, gamma, beta, running_mean, running_var),
        {"training": training, "eps": eps},
        name=name,
    )


def maxpool2d(x: OpNode, kernel: int = 2) -> OpNode:
    return OpNode("maxpool2d", (x,), {"kernel": int(kernel)})


def global_avg_pool(x: OpNode) -> OpNode:
    return OpNode("globalavgpool", (x,))


def flatten(x: OpNode) -> OpNode:
    return OpNode("flatten", (x,))


def softmax_cross_entropy(logits: OpNode, labels: OpNode) -> OpNode:
    return OpNode("softmax-cross-entropy", (logits, labels))


def squared_error(prediction: OpNode, target: OpNode) -> OpNode:
    return OpNode("squared-error", (prediction, target))


def mean_reduce(a: OpNode) -> OpNode:
    return OpNode("mean-reduce", (a,))


def index_select(a: OpNode, indices: Sequence[int]) -> OpNode:
    return OpNode("index-select", (a,), {"indices": tuple(int(i) for i in indices)})


def clamp(a: OpNode, low: float, high: float) -> OpNode:
    return OpNode("clamp", (a,), {"low": float(low), "high": float(high)})
