from .autodiff import (
    DEFAULT_DTYPE,
    NonFiniteError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    exp,
    frames,
    getitem,
    inject_fault,
    is_grad_enabled,
    layer_norm,
    linear,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    overlap_add,
    pad_end,
    parameter,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    sub,
    transpose,
    tsum,
)
from .gradcheck import GradCheckReport, grad_check, numerical_gradient, relative_error

__all__ = [
    "DEFAULT_DTYPE", "NonFiniteError", "Tensor", "add", "as_tensor", "backward", "concat",
    "div", "exp", "frames", "getitem", "inject_fault", "is_grad_enabled", "layer_norm",
    "linear", "log", "matmul", "mean", "mul", "no_grad", "overlap_add", "pad_end",
    "parameter", "relu", "reshape", "sigmoid", "softmax", "sqrt", "sub", "transpose", "tsum",
    "GradCheckReport", "grad_check", "numerical_gradient", "relative_error",
]
