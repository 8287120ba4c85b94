"""Minimal reverse-mode autodiff engine on numpy arrays."""
from .tensor import (
    Tensor,
    GraphError,
    as_tensor,
    default_dtype,
    grad_enabled,
    no_grad,
    set_default_dtype,
    using_dtype,
)
from .ops import (
    ShapeError,
    abs_,
    add,
    affine_grid,
    clip,
    concat,
    conv2d,
    deformable_conv2d,
    grid_sample,
    identity_grid,
    leaky_relu,
    log,
    mean,
    mul,
    neg,
    pixel_shuffle,
    pixel_unshuffle,
    reshape,
    resize_bilinear,
    sigmoid,
    sub,
    sum_,
)
from .optim import Adam, OptimError
from .gradcheck import gradcheck

__all__ = [
    "Tensor", "GraphError", "as_tensor", "default_dtype", "grad_enabled",
    "no_grad", "set_default_dtype", "using_dtype",
    "ShapeError", "abs_", "add", "affine_grid", "clip", "concat", "conv2d",
    "deformable_conv2d", "grid_sample", "identity_grid", "leaky_relu", "log",
    "mean", "mul", "neg", "pixel_shuffle", "pixel_unshuffle", "reshape",
    "resize_bilinear", "sigmoid", "sub", "sum_",
    "Adam", "OptimError", "gradcheck",
]
