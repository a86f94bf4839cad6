"""Forward and backward rules for the closed operator set.

Every operator works on plain numpy arrays. ``forward`` returns the output
and a cache; ``backward`` receives the gradient of the loss with respect to
the output and returns one gradient (or None) per input, computing only the
inputs flagged in ``needs``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from anm.errors import ShapeError

Grads = tuple[np.ndarray | None, ...]


class Op(ABC):
    kind: str = ""
    arity: int = 1

    @abstractmethod
    def forward(self, inputs: Sequence[np.ndarray], attrs: dict[str, Any]) -> tuple[np.ndarray, Any]:
        ...

    @abstractmethod
    def backward(
        self, grad: np.ndarray, cache: Any, needs: Sequence[bool], attrs: dict[str, Any]
    ) -> Grads:
        ...

    def kinks(self, cache: Any) -> bytes | None:
        """Bytes identifying the active linear piece, for ops with kinks."""
        return None

    def fail(self, inputs: Sequence[np.ndarray], detail: str = "") -> ShapeError:
        return ShapeError(self.kind, [np.shape(x) for x in inputs], detail)


OPS: dict[str, Op] = {}


def register(cls: type[Op]) -> type[Op]:
    OPS[cls.kind] = cls()
    return cls


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out the axes numpy broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


@register
class Add(Op):
    kind = "add"
    arity = 2

    def forward(self, inputs, attrs):
        a, b = inputs
        try:
            out_shape = np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise self.fail(inputs) from None
        return a + b, (a.shape, b.shape, out_shape)

    def backward(self, grad, cache, needs, attrs):
        a_shape, b_shape, _ = cache
        return (
            unbroadcast(grad, a_shape) if needs[0] else None,
            unbroadcast(grad, b_shape) if needs[1] else None,
        )


@register
class Scale(Op):
    kind = "scale"

    def forward(self, inputs, attrs):
        (a,) = inputs
        return a * a.dtype.type(attrs["factor"]), None

    def backward(self, grad, cache, needs, attrs):
        return (grad * grad.dtype.type(attrs["factor"]),)


@register
class Matmul(Op):
    kind = "matmul"
    arity = 2

    def forward(self, inputs, attrs):
        a, b = inputs
        rhs = b.T if attrs.get("transpose_b") else b
        if a.ndim != 2 or rhs.ndim != 2 or a.shape[1] != rhs.shape[0]:
            raise self.fail(inputs, "transpose_b" if attrs.get("transpose_b") else "")
        return a @ rhs, (a, b)

    def backward(self, grad, cache, needs, attrs):
        a, b = cache
        if attrs.get("transpose_b"):
            # out = a @ b.T
            ga = grad @ b if needs[0] else None
            gb = grad.T @ a if needs[1] else None
        else:
            ga = grad @ b.T if needs[0] else None
            gb = a.T @ grad if needs[1] else None
        return ga, gb


@register
class Conv2d(Op):
    kind = "conv2d"
    arity = 2

    def forward(self, inputs, attrs):
        x, w = inputs
        stride, pad = attrs["stride"], attrs["padding"]
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
            raise self.fail(inputs, "expects NCHW input and OIHW kernel")
        kh, kw = w.shape[2], w.shape[3]
        if x.shape[2] + 2 * pad < kh or x.shape[3] + 2 * pad < kw:
            raise self.fail(inputs, "kernel larger than padded input")
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))  # N,Ho,Wo,O
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
        return out, (x.shape, xp.shape, windows, w)

    def backward(self, grad, cache, needs, attrs):
        x_shape, xp_shape, windows, w = cache
        stride, pad = attrs["stride"], attrs["padding"]
        gx = gw = None
        if needs[1]:
            gw = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3])).astype(w.dtype, copy=False)
        if needs[0]:
            _, _, ho, wo = grad.shape
            kh, kw = w.shape[2], w.shape[3]
            gxp = np.zeros(xp_shape, dtype=grad.dtype)
            for i in range(kh):
                for j in range(kw):
                    part = np.tensordot(grad, w[:, :, i, j], axes=([1], [0]))  # N,Ho,Wo,C
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                        part.transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, pad:pad + x_shape[2], pad:pad + x_shape[3]] if pad else gxp
            gx = np.ascontiguousarray(gx)
        return gx, gw


@register
class Relu(Op):
    kind = "relu"

    def forward(self, inputs, attrs):
        (a,) = inputs
        mask = a > 0
        return np.where(mask, a, a.dtype.type(0)), mask

    def backward(self, grad, mask, needs, attrs):
        return (np.where(mask, grad, grad.dtype.type(0)),)

    def kinks(self, mask):
        return np.packbits(mask).tobytes()


def _bn_axes(x: np.ndarray) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if x.ndim == 4:
        return (0, 2, 3), (1, x.shape[1], 1, 1)
    return (0,), (1, x.shape[1])


@register
class BatchNorm(Op):
    """Per-channel normalization with inference and batch-statistics modes."""

    kind = "batchnorm"
    arity = 5

    def forward(self, inputs, attrs):
        x, gamma, beta, running_mean, running_var = inputs
        if x.ndim not in (2, 4):
            raise self.fail(inputs, "expects rank 2 or 4 input")
        channels = x.shape[1]
        if any(p.shape != (channels,) for p in (gamma, beta, running_mean, running_var)):
            raise self.fail(inputs, f"per-channel parameters must have shape ({channels},)")
        axes, pshape = _bn_axes(x)
        eps = attrs["eps"]
        if attrs["training"]:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
        else:
            mean, var = running_mean, running_var
        inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
        xhat = (x - mean.reshape(pshape)) * inv.reshape(pshape)
        out = gamma.reshape(pshape) * xhat + beta.reshape(pshape)
        return out, (xhat, inv, gamma, axes, pshape, mean, var)

    def backward(self, grad, cache, needs, attrs):
        xhat, inv, gamma, axes, pshape, _, _ = cache
        gx = None
        if needs[0]:
            dxhat = grad * gamma.reshape(pshape)
            if attrs["training"]:
                m = grad.size // gamma.shape[0]
                gx = (inv.reshape(pshape) / m) * (
                    m * dxhat
                    - dxhat.sum(axis=axes).reshape(pshape)
                    - xhat * (dxhat * xhat).sum(axis=axes).reshape(pshape)
                )
            else:
                gx = dxhat * inv.reshape(pshape)
        ggamma = (grad * xhat).sum(axis=axes) if needs[1] else None
        gbeta = grad.sum(axis=axes) if needs[2] else None
        return gx, ggamma, gbeta, None, None


@register
class MaxPool2d(Op):
    kind = "maxpool2d"

    def forward(self, inputs, attrs):
        (x,) = inputs
        k = attrs["kernel"]
        if x.ndim != 4 or x.shape[2] % k or x.shape[3] % k:
            raise self.fail(inputs, f"spatial extents must be divisible by {k}")
        n, c, h, w = x.shape
        blocks = x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h // k, w // k, k * k
        )
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return out, (x.shape, idx)

    def backward(self, grad, cache, needs, attrs):
        (n, c, h, w), idx = cache
        k = attrs["kernel"]
        blocks = np.zeros((n, c, h // k, w // k, k * k), dtype=grad.dtype)
        np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=-1)
        gx = blocks.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (np.ascontiguousarray(gx),)

    def kinks(self, cache):
        return cache[1].astype(np.int8).tobytes()


@register
class GlobalAvgPool(Op):
    kind = "globalavgpool"

    def forward(self, inputs, attrs):
        (x,) = inputs
        if x.ndim != 4:
            raise self.fail(inputs, "expects NCHW input")
        return x.mean(axis=(2, 3), keepdims=True), x.shape

    def backward(self, grad, shape, needs, attrs):
        area = shape[2] * shape[3]
        return (np.broadcast_to(grad / grad.dtype.type(area), shape).copy(),)


@register
class Flatten(Op):
    kind = "flatten"

    def forward(self, inputs, attrs):
        (x,) = inputs
        if x.ndim < 2:
            raise self.fail(inputs, "needs a batch axis")
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, shape, needs, attrs):
        return (grad.reshape(shape),)


@register
class SoftmaxCrossEntropy(Op):
    """Mean softmax cross-entropy over the batch; labels are integer class ids."""

    kind = "softmax-cross-entropy"
    arity = 2

    def forward(self, inputs, attrs):
        logits, labels = inputs
        if logits.ndim != 2 or labels.shape != (logits.shape[0],):
            raise self.fail(inputs)
        if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
            raise self.fail(inputs, "label outside logit range")
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        rows = np.arange(logits.shape[0])
        loss = -log_probs[rows, labels].mean()
        return np.asarray(loss, dtype=logits.dtype), (log_probs, labels)

    def backward(self, grad, cache, needs, attrs):
        log_probs, labels = cache
        n = log_probs.shape[0]
        g = np.exp(log_probs)
        g[np.arange(n), labels] -= 1
        return g * (grad / log_probs.dtype.type(n)), None


@register
class SquaredError(Op):
    """Elementwise (prediction - target)**2 with broadcasting of the target."""

    kind = "squared-error"
    arity = 2

    def forward(self, inputs, attrs):
        pred, target = inputs
        try:
            np.broadcast_shapes(pred.shape, target.shape)
        except ValueError:
            raise self.fail(inputs) from None
        diff = pred - target
        return diff * diff, (diff, pred.shape, target.shape)

    def backward(self, grad, cache, needs, attrs):
        diff, pred_shape, target_shape = cache
        g = 2 * diff * grad
        return (
            unbroadcast(g, pred_shape) if needs[0] else None,
            unbroadcast(-g, target_shape) if needs[1] else None,
        )


@register
class MeanReduce(Op):
    kind = "mean-reduce"

    def forward(self, inputs, attrs):
        (a,) = inputs
        if a.size == 0:
            raise self.fail(inputs, "mean of an empty tensor")
        return np.asarray(a.mean(), dtype=a.dtype), a.shape

    def backward(self, grad, shape, needs, attrs):
        size = int(np.prod(shape))
        return (np.full(shape, grad / grad.dtype.type(size), dtype=grad.dtype),)


@register
class IndexSelect(Op):
    """Columns of a (batch, features) matrix: one scalar per (sample, index)."""

    kind = "index-select"

    def forward(self, inputs, attrs):
        (a,) = inputs
        indices = np.asarray(attrs["indices"], dtype=np.int64)
        if a.ndim != 2:
            raise self.fail(inputs, "expects (batch, features)")
        if indices.size == 0 or indices.min() < 0 or indices.max() >= a.shape[1]:
            raise self.fail(inputs, f"indices {tuple(indices)} out of range for {a.shape[1]} features")
        return a[:, indices], (a.shape, indices)

    def backward(self, grad, cache, needs, attrs):
        shape, indices = cache
        out = np.zeros(shape, dtype=grad.dtype)
        np.add.at(out, (slice(None), indices), grad)
        return (out,)


@register
class Clamp(Op):
    """Clip to [low, high]; the gradient passes inside the interval and is 0 outside."""

    kind = "clamp"

    def forward(self, inputs, attrs):
        (a,) = inputs
        low, high = attrs["low"], attrs["high"]
        inside = (a >= low) & (a <= high)
        out = np.clip(a, a.dtype.type(low), a.dtype.type(high))
        return out, (inside, a < low, a > high)

    def backward(self, grad, cache, needs, attrs):
        inside = cache[0]
        return (np.where(inside, grad, grad.dtype.type(0)),)

    def kinks(self, cache):
        _, below, above = cache
        return np.packbits(below).tobytes() + np.packbits(above).tobytes()
