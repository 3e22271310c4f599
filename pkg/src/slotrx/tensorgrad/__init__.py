"""Minimal dense-tensor engine with reverse-mode autodiff.

Provides exactly the layer types the neural receiver needs plus an Adam
optimizer and a named-tensor container for checkpoints.
"""

from .adam import Adam
from .autodiff import (
    Tensor,
    add,
    backward,
    bce_with_logits,
    concat,
    constant,
    dense,
    mean_over_others,
    relu,
    reshape,
    scale,
    separable_conv2d,
    sigmoid,
)
from .gradcheck import finite_difference_gradients, max_relative_error, relative_error_report
from .kernels import BACKEND
from .params import ParamSet, load_tensors, save_tensors

__all__ = [
    "Adam",
    "BACKEND",
    "ParamSet",
    "Tensor",
    "add",
    "backward",
    "bce_with_logits",
    "concat",
    "constant",
    "dense",
    "finite_difference_gradients",
    "load_tensors",
    "max_relative_error",
    "mean_over_others",
    "relative_error_report",
    "relu",
    "reshape",
    "save_tensors",
    "scale",
    "separable_conv2d",
    "sigmoid",
]
