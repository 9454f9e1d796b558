from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckError, GradCheckReport, grad_check, grad_check_report
from .ops import (add, avg_pool2x, clip, concat, conv2d, div, exp, l2_normalize, layer_norm, log,
                  log_softmax_rows, matmul, mean, mul, relu, reshape, scale, sigmoid, softmax_rows,
                  sub, sum, swap_last, take, transpose, upsample_bilinear, upsample_nearest2x)
from .tensor import DTYPE, Parameter, Tensor, as_tensor, no_grad

__all__ = [
    "DTYPE", "Parameter", "Tensor", "as_tensor", "no_grad", "ops",
    "add", "avg_pool2x", "clip", "concat", "conv2d", "div", "exp", "l2_normalize", "layer_norm",
    "log", "log_softmax_rows", "matmul", "mean", "mul", "relu", "reshape", "scale", "sigmoid",
    "softmax_rows", "sub", "sum", "swap_last", "take", "transpose", "upsample_bilinear",
    "upsample_nearest2x",
    "grad_check", "grad_check_report", "GradCheckError", "GradCheckReport",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]
