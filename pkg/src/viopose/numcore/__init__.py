"""Minimal float64 tensor library with reverse-mode autodiff, Adam, and gradient checks."""

from . import ops
from .gradcheck import check_parameters, grad_check, numeric_grad, relative_error
from .ops import (
    BatchNormState, batch_norm_bt, central_diff, concat, conv1d, cumsum_time, diff_time,
    gelu, layer_norm, matmul, maximum, mean, norm, relu, softmax, where,
)
from .optim import AdamState, NonFiniteGradient, adam_step
from .tensor import ShapeError, Tape, TapeError, Tensor, active_tape, as_tensor, backward

__all__ = [
    "ops", "Tensor", "Tape", "TapeError", "ShapeError", "active_tape", "as_tensor", "backward",
    "AdamState", "adam_step", "NonFiniteGradient", "grad_check", "numeric_grad", "relative_error",
    "check_parameters", "BatchNormState", "batch_norm_bt", "central_diff", "concat", "conv1d",
    "cumsum_time", "diff_time", "gelu", "layer_norm", "matmul", "maximum", "mean", "norm", "relu",
    "softmax", "where",
]
