from .gradcheck import GradCheckReport, grad_check
from .ops import avg_pool2, bilinear_sample, channel_norm, conv_axis, instance_norm, matmul, softmax
from .tensor import (
    GradTape,
    TapeError,
    Tensor,
    add,
    backward,
    concat,
    default_dtype,
    getitem,
    mean,
    mul,
    no_grad,
    pointwise,
    precision,
    relu,
    reshape,
    sigmoid,
    split,
    stack,
    sub,
    tabs,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "GradCheckReport",
    "GradTape",
    "TapeError",
    "Tensor",
    "add",
    "avg_pool2",
    "backward",
    "bilinear_sample",
    "channel_norm",
    "concat",
    "conv_axis",
    "default_dtype",
    "getitem",
    "grad_check",
    "instance_norm",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "pointwise",
    "precision",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "split",
    "stack",
    "sub",
    "tabs",
    "tanh",
    "transpose",
    "tsum",
]
