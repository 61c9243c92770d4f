from . import ops
from .gradcheck import grad_check
from .norm import NormState, batch_norm, layer_norm
from .ops import bce_loss, concat, cross_entropy, linear, relu
from .tensor import Graph, Tensor, backward

__all__ = [
    "Graph",
    "NormState",
    "Tensor",
    "backward",
    "batch_norm",
    "bce_loss",
    "concat",
    "cross_entropy",
    "grad_check",
    "layer_norm",
    "linear",
    "ops",
    "relu",
]
