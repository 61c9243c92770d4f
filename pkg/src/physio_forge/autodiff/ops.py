"""Differentiable operations on :class:`Tensor`.

Spatial tensors are channel-last: ``[B, H, W, C]``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ClassIndexError, DimensionError
from .tensor import Tensor


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return Tensor.from_op(
        out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add"
    )


def neg(x: Tensor) -> Tensor:
    return Tensor.from_op(-x.data, (x,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return Tensor.from_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def sum(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor.from_op(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return Tensor.from_op(
        np.array(x.data.mean()), (x,), lambda g: (np.full(shape, g / n),), "mean"
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    orig = x.shape
    return Tensor.from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),), "reshape")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return Tensor.from_op(
        a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul"
    )


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``y[b, o] = sum_i x[b, i] * weight[i, o] + bias[o]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias {bias.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data
    if bias is None:
        return Tensor.from_op(out, (x, weight), lambda g: (g @ weight.data.T, x.data.T @ g), "linear")
    out = out + bias.data
    return Tensor.from_op(
        out,
        (x, weight, bias),
        lambda g: (g @ weight.data.T, x.data.T @ g, g.sum(axis=0)),
        "linear",
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([0] + sizes)

    def _bw(g):
        index = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[ax] = slice(lo, hi)
            parts.append(g[tuple(index)])
        return parts

    return Tensor.from_op(out, tensors, _bw, "concat")


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather along the batch axis; gradients scatter-add back."""
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def _bw(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return Tensor.from_op(x.data[index], (x,), _bw, "take_rows")


def conv3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padding 3x3 convolution, stride 1.

    ``x`` is ``[B, H, W, Cin]`` and ``weight`` is ``[9 * Cin, Cout]`` with rows
    ordered (kernel row, kernel column, input channel).
    """
    if x.ndim != 4 or weight.ndim != 2 or weight.shape[0] != 9 * x.shape[3]:
        raise DimensionError(f"conv3x3: input {x.shape} incompatible with weight {weight.shape}")
    B, H, W, C = x.shape
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.concatenate([xp[:, i : i + H, j : j + W, :] for i in range(3) for j in range(3)], axis=-1)
    flat = cols.reshape(-1, 9 * C)
    out = (flat @ weight.data).reshape(B, H, W, -1)
    if bias is not None:
        out = out + bias.data

    def _bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        dw = flat.T @ g2
        db = g2.sum(axis=0) if bias is not None else None
        if not x.requires_grad:
            # network inputs: skip the col2im scatter
            return (None, dw) if bias is None else (None, dw, db)
        dcols = (g2 @ weight.data.T).reshape(B, H, W, 9 * C)
        dxp = np.zeros_like(xp)
        k = 0
        for i in range(3):
            for j in range(3):
                dxp[:, i : i + H, j : j + W, :] += dcols[..., k * C : (k + 1) * C]
                k += 1
        dx = dxp[:, 1:-1, 1:-1, :]
        return (dx, dw) if bias is None else (dx, dw, db)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, _bw, "conv3x3")


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling over ``[B, H, W, C]``; a trailing odd row/column is dropped."""
    B, H, W, C = x.shape
    h, w = H // 2, W // 2
    if h == 0 or w == 0:
        raise DimensionError(f"avg_pool2: spatial size {H}x{W} too small")
    out = x.data[:, : 2 * h, : 2 * w, :].reshape(B, h, 2, w, 2, C).mean(axis=(2, 4))

    def _bw(g):
        dx = np.zeros((B, H, W, C))
        dx[:, : 2 * h, : 2 * w, :] = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0
        return (dx,)

    return Tensor.from_op(out, (x,), _bw, "avg_pool2")


def global_avg_pool(x: Tensor) -> Tensor:
    B, H, W, C = x.shape
    return Tensor.from_op(
        x.data.mean(axis=(1, 2)),
        (x,),
        lambda g: (np.broadcast_to(g[:, None, None, :] / (H * W), x.shape).copy(),),
        "global_avg_pool",
    )


def sigmoid_np(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def bce_loss(logit: Tensor, y_gt) -> Tensor:
    """Mean binary cross-entropy on logits (1 = bonafide, 0 = attack).

    Uses ``max(z, 0) - z*y + log(1 + exp(-|z|))`` so no logarithm of zero is taken.
    """
    z = logit.data.reshape(-1)
    y = np.asarray(y_gt, dtype=np.float64).reshape(-1)
    if z.shape != y.shape:
        raise DimensionError(f"bce_loss: logits {logit.shape} vs labels {y.shape}")
    n = z.size
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    shape = logit.shape
    return Tensor.from_op(
        np.array(per.mean()),
        (logit,),
        lambda g: (((sigmoid_np(z) - y) * (g / n)).reshape(shape),),
        "bce_loss",
    )


def cross_entropy(logits: Tensor, y_gt) -> Tensor:
    """Mean softmax cross-entropy; ``y_gt`` holds class indices."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [B, C] logits, got {logits.shape}")
    B, C = logits.shape
    y = np.asarray(y_gt).reshape(-1)
    if y.shape[0] != B:
        raise DimensionError(f"cross_entropy: {B} logits rows vs {y.shape[0]} labels")
    if np.any((y < 0) | (y >= C)) or np.any(y != np.round(y)):
        raise ClassIndexError(f"class index outside [0, {C}): {y.tolist()}")
    y = y.astype(np.int64)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = (log_norm - shifted[np.arange(B), y]).mean()

    def _bw(g):
        p = softmax_np(logits.data)
        p[np.arange(B), y] -= 1.0
        return (p * (g / B),)

    return Tensor.from_op(np.array(loss), (logits,), _bw, "cross_entropy")


def weighted_sum(terms: Sequence[tuple[float, Tensor]]) -> Tensor:
    """``sum_k w_k * t_k`` for scalar or same-shape tensors."""
    out = None
    for w, t in terms:
        term = t if w == 1.0 else mul(t, float(w))
        out = term if out is None else add(out, term)
    return out
