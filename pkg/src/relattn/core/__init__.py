from . import autodiff as ad
from .autodiff import Tensor, backward, softmax_rows, topological_order
from .optim import AdamConfig, ParamStore, adam_step, dropout_apply, grad

__all__ = [
    "ad",
    "Tensor",
    "backward",
    "softmax_rows",
    "topological_order",
    "AdamConfig",
    "ParamStore",
    "adam_step",
    "dropout_apply",
    "grad",
]
