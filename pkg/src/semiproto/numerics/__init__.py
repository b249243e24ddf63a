"""Tensor arithmetic, reverse-mode differentiation, Adam and LR schedules."""
from semiproto.numerics.checkpoint import load_checkpoint, save_checkpoint
from semiproto.numerics.gradcheck import GradCheckError, grad_check, numerical_grads
from semiproto.numerics.optim import AdamState, StepSchedule, adam_step, lr_at
from semiproto.numerics.tensor import (
    OPS,
    Graph,
    Tensor,
    add,
    affine,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    conv2d,
    div,
    exp,
    forward_op,
    getitem,
    is_grad_enabled,
    log,
    log_softmax,
    matmul,
    max_,
    maxpool2,
    mean,
    min_,
    mul,
    no_grad,
    pairwise_sqdist,
    relu,
    reshape,
    sigmoid,
    square,
    stop_gradient,
    sub,
    sum_,
    tanh,
    transpose,
)

__all__ = [
    "AdamState", "GradCheckError", "Graph", "OPS", "StepSchedule", "Tensor", "adam_step", "add",
    "affine", "as_tensor", "backward", "broadcast_to", "concat", "conv2d", "div", "exp",
    "forward_op", "getitem", "grad_check", "is_grad_enabled", "load_checkpoint", "log",
    "log_softmax", "lr_at", "matmul", "max_", "maxpool2", "mean", "min_", "mul", "no_grad",
    "numerical_grads", "pairwise_sqdist", "relu", "reshape", "save_checkpoint", "sigmoid",
    "square", "stop_gradient", "sub", "sum_", "tanh", "transpose",
]
