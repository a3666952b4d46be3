from .autograd import Tensor, no_grad, grad_enabled, add, mul, reshape, parameters_of
from .functional import (
    avg_pool2d,
    channel_affine,
    concat,
    conv2d,
    shift,
    cross_entropy,
    global_avg_pool,
    linear,
    max_pool2d,
    relu,
    sample_norm,
    scale_samples,
    softmax,
    weighted_sum,
)
from .optim import SGD, Adam, CosineRestartSchedule, Optimizer, lr_at

__all__ = [
    "Tensor", "no_grad", "grad_enabled", "add", "mul", "reshape", "parameters_of",
    "avg_pool2d", "channel_affine", "concat", "conv2d", "shift", "cross_entropy",
    "global_avg_pool", "linear", "max_pool2d", "relu", "sample_norm", "scale_samples", "softmax",
    "weighted_sum", "SGD", "Adam", "CosineRestartSchedule", "Optimizer", "lr_at",
]
