"""Batch and layer normalization over the trailing (channel) axis."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateBatchError, DimensionError
from .tensor import Tensor

EPS = 1e-5
MOMENTUM = 0.9


class NormState:
    """Per-channel normalization state.

    ``scale`` and ``shift`` are tensors; they are trainable only when
    ``affine`` is set. Running statistics follow
    ``running = momentum * running + (1 - momentum) * batch``.
    """

    def __init__(self, channels: int, affine: bool = True, momentum: float = MOMENTUM, eps: float = EPS):
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {momentum}")
        if eps < 0:
            raise ValueError(f"eps must be non-negative, got {eps}")
        self.channels = channels
        self.affine = affine
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.scale = Tensor(np.ones(channels), requires_grad=affine)
        self.shift = Tensor(np.zeros(channels), requires_grad=affine)


def _check_channels(x: Tensor, state: NormState, who: str) -> None:
    if x.ndim < 2 or x.shape[-1] != state.channels:
        raise DimensionError(f"{who}: input {x.shape} does not end in {state.channels} channels")


def _affine_backward(g, xhat, inv_std, axes, state):
    gamma = state.scale.data
    dxhat = g * gamma
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=axes, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
    )
    return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)


def batch_norm(x: Tensor, state: NormState, training: bool) -> Tensor:
    """Normalize each channel with statistics over every other axis.

    In training mode the batch statistics are used and the running estimates
    updated; in evaluation mode the running estimates are used.
    """
    _check_channels(x, state, "batch_norm")
    axes = tuple(range(x.ndim - 1))
    count = x.size // state.channels
    if training:
        if count < 2:
            raise DegenerateBatchError(
                f"batch_norm in training mode needs at least 2 values per channel, got input {x.shape}"
            )
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mu
        state.running_var = m * state.running_var + (1.0 - m) * var
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu) * inv_std
        out = xhat * state.scale.data + state.shift.data
        return Tensor.from_op(
            out,
            (x, state.scale, state.shift),
            lambda g: _affine_backward(g, xhat, inv_std, axes, state),
            "batch_norm",
        )
    inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
    xhat = (x.data - state.running_mean) * inv_std
    out = xhat * state.scale.data + state.shift.data
    return Tensor.from_op(
        out,
        (x, state.scale, state.shift),
        lambda g: (g * state.scale.data * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)),
        "batch_norm_eval",
    )


def layer_norm(x: Tensor, state: NormState) -> Tensor:
    """Normalize each sample across its channels; no running statistics."""
    _check_channels(x, state, "layer_norm")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * state.scale.data + state.shift.data
    axes = tuple(range(x.ndim - 1))
    gamma = state.scale.data

    def _bw(g):
        dxhat = g * gamma
        dx = inv_std * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return Tensor.from_op(out, (x, state.scale, state.shift), _bw, "layer_norm")
