"""Minimal float64 autodiff engine and the layers built on it."""

from .tensor import (
    Param,
    Tensor,
    add,
    backward,
    clamp,
    concat,
    gather_rows,
    log,
    make_op,
    matmul,
    mean_all,
    mul,
    neg,
    no_grad,
    power,
    reshape,
    sub,
    sum_all,
    transpose,
    zero_grads,
)
from .kernels import (
    BatchNormState,
    avgpool_last_axis,
    batchnorm,
    dense,
    pointwise_conv1d,
    relu,
    segment_mean,
    softmax,
)
from .optim import AdamState, adam_step
from .schedule import OneCycleSchedule

__all__ = [
    "AdamState",
    "BatchNormState",
    "OneCycleSchedule",
    "Param",
    "Tensor",
    "adam_step",
    "add",
    "avgpool_last_axis",
    "backward",
    "batchnorm",
    "clamp",
    "concat",
    "dense",
    "gather_rows",
    "log",
    "make_op",
    "matmul",
    "mean_all",
    "mul",
    "neg",
    "no_grad",
    "pointwise_conv1d",
    "power",
    "relu",
    "reshape",
    "segment_mean",
    "softmax",
    "sub",
    "sum_all",
    "transpose",
    "zero_grads",
]
