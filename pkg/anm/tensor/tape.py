"""Forward evaluation with a cache, and reverse-mode passes over it."""

from __future__ import annotations

import hashlib
import logging
from typing import Any, Collection, Iterable, Mapping

import numpy as np

from anm.errors import NotScalarError, UnboundInputError, ValidationError
from anm.tensor.ops import OPS
from anm.tensor.tensor import OpNode, Tensor, topological_order

logger = logging.getLogger(__name__)


class Tape:
    """Holds the forward cache of one evaluation.

    A tape serves one episode at a time: ``evaluate`` replaces the cache,
    and the gradient methods differentiate any scalar node of the evaluated
    graph. Floating inputs are cast to the tape dtype when bound; integer
    inputs (labels) are kept as they are.
    """

    def __init__(self, dtype: Any = np.float32) -> None:
        self.dtype = np.dtype(dtype)
        self._order: list[OpNode] = []
        self._values: dict[int, np.ndarray] = {}
        self._caches: dict[int, Any] = {}
        self._bound: dict[str, Tensor] = {}

    def _bind(self, inputs: Mapping[str, Tensor | np.ndarray]) -> dict[str, Tensor]:
        bound = {}
        for name, value in inputs.items():
            tensor = Tensor.wrap(value)
            if tensor.is_float and tensor.dtype != self.dtype:
                tensor = tensor.astype(self.dtype)
            bound[name] = tensor
        return bound

    def evaluate(self, root: OpNode, inputs: Mapping[str, Tensor | np.ndarray]) -> Tensor:
        """Run the forward pass of ``root`` and cache intermediates."""
        self._bound = self._bind(inputs)
        self._order = topological_order(root)
        self._values = {}
        self._caches = {}
        for node in self._order:
            if node.kind == "input":
                if node.name not in self._bound:
                    raise UnboundInputError(str(node.name))
                self._values[node.uid] = self._bound[node.name].data
                continue
            op = OPS[node.kind]
            args = [self._values[parent.uid] for parent in node.inputs]
            out, cache = op.forward(args, node.attrs)
            self._values[node.uid] = out
            self._caches[node.uid] = cache
        return Tensor(self._values[root.uid], dtype=self._values[root.uid].dtype)

    def value(self, node: OpNode) -> np.ndarray:
        return self._values[node.uid]

    def batch_statistics(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Batch mean and variance of every named batchnorm node evaluated in training mode."""
        stats = {}
        for node in self._order:
            if node.kind == "batchnorm" and node.attrs["training"] and node.name:
                cache = self._caches[node.uid]
                stats[node.name] = (cache[5], cache[6])
        return stats

    def kink_signature(self) -> str:
        """Digest of the active linear pieces of every relu, maxpool and clamp."""
        digest = hashlib.sha256()
        for node in self._order:
            if node.kind == "input":
                continue
            marker = OPS[node.kind].kinks(self._caches[node.uid])
            if marker is not None:
                digest.update(marker)
        return digest.hexdigest()

    def gradients(self, loss: OpNode, names: Iterable[str]) -> dict[str, Tensor]:
        """Reverse-mode gradients of a scalar node with respect to named inputs.

        Inputs the loss does not depend on get a zero tensor whose metadata
        carries ``on_path=False``.
        """
        wanted = set(names)
        for name in wanted:
            if name not in self._bound:
                raise UnboundInputError(name)
        if loss.uid not in self._values:
            raise ValidationError("loss node was not part of the last evaluation")
        loss_value = self._values[loss.uid]
        if loss_value.size != 1:
            raise NotScalarError(loss_value.shape)

        order = topological_order(loss)
        needs: dict[int, bool] = {}
        for node in order:
            if node.kind == "input":
                needs[node.uid] = node.name in wanted and self._bound[node.name].is_float
            else:
                needs[node.uid] = any(needs[p.uid] for p in node.inputs)

        grads: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss_value)}
        by_name: dict[str, np.ndarray] = {}
        for node in reversed(order):
            grad = grads.pop(node.uid, None)
            if grad is None or not needs[node.uid]:
                continue
            if node.kind == "input":
                by_name[node.name] = by_name[node.name] + grad if node.name in by_name else grad
                continue
            op = OPS[node.kind]
            flags = [needs[p.uid] for p in node.inputs]
            parts = op.backward(grad, self._caches[node.uid], flags, node.attrs)
            for parent, flag, part in zip(node.inputs, flags, parts):
                if not flag or part is None:
                    continue
                if parent.uid in grads:
                    grads[parent.uid] = grads[parent.uid] + part
                else:
                    grads[parent.uid] = part

        result = {}
        for name in sorted(wanted):
            bound = self._bound[name]
            if name in by_name:
                result[name] = Tensor(by_name[name], dtype=bound.dtype, meta={"on_path": True})
            else:
                logger.debug("Input %s is not on the path of the loss", name)
                result[name] = Tensor(
                    np.zeros(bound.shape, dtype=bound.dtype), dtype=bound.dtype, meta={"on_path": False}
                )
        return result

    def gradient_wrt_input(self, loss: OpNode, name: str) -> Tensor:
        return self.gradients(loss, [name])[name]

    def gradient_wrt_params(self, loss: OpNode, frozen: Collection[str] = ()) -> dict[str, Tensor]:
        """Gradients for every bound input marked ``requires_grad`` and not frozen."""
        names = [
            name
            for name, tensor in self._bound.items()
            if tensor.requires_grad and tensor.is_float and name not in frozen
        ]
        return self.gradients(loss, names)


def evaluate(root: OpNode, inputs: Mapping[str, Tensor | np.ndarray], dtype: Any = np.float32) -> Tensor:
    """One-shot forward pass without keeping the tape."""
    return Tape(dtype).evaluate(root, inputs)


