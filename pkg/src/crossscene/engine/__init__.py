"""Minimal reverse-mode compute layer: tensors, primitives, optimizer, checks."""

from .gradcheck import GradCheckReport, grad_check, primitive_checks, run_primitive_checks
from .optim import NumericError, lr_schedule, sgd_momentum_step, zero_grads
from .tensor import (
    OPSET,
    Parameter,
    Tensor,
    add,
    affine,
    avg_pool2d,
    batch_norm2d,
    center_pixel,
    check_finite,
    conv2d,
    depthwise_conv2d,
    exp,
    gather_rows,
    gelu,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    mul,
    reshape,
    scale,
    softmax,
    sub,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "OPSET",
    "GradCheckReport",
    "NumericError",
    "Parameter",
    "Tensor",
    "add",
    "affine",
    "avg_pool2d",
    "batch_norm2d",
    "center_pixel",
    "check_finite",
    "conv2d",
    "depthwise_conv2d",
    "exp",
    "gather_rows",
    "gelu",
    "grad_check",
    "leaky_relu",
    "log",
    "log_softmax",
    "lr_schedule",
    "matmul",
    "mul",
    "primitive_checks",
    "reshape",
    "run_primitive_checks",
    "scale",
    "sgd_momentum_step",
    "softmax",
    "sub",
    "tmean",
    "transpose",
    "tsum",
    "zero_grads",
]
