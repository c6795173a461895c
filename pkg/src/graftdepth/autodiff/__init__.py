"""Minimal reverse-mode automatic differentiation over numpy arrays."""
from .tensor import Tensor, Tape, Gradients, backward, no_grad, is_grad_enabled, tensor, zero_grad, unbroadcast
from .functional import (
    conv2d,
    resize_bilinear,
    resize_nearest,
    upsample_nearest,
    concat,
    where,
    minimum,
    maximum,
    box_filter,
    box_filter3,
)
from .gradcheck import grad_check, analytic_and_numeric
from . import serialize

__all__ = [
    "Tensor", "Tape", "Gradients", "backward", "no_grad", "is_grad_enabled", "tensor", "zero_grad",
    "unbroadcast", "conv2d", "resize_bilinear", "resize_nearest", "upsample_nearest", "concat", "where",
    "minimum", "maximum", "box_filter", "box_filter3", "grad_check", "analytic_and_numeric", "serialize",
]
