"""Differentiable primitives beyond plain elementwise arithmetic."""
from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from .. import _kernels
from .tensor import Tensor, unbroadcast


DIRECT_CONV_MAX_CHANNEL_PRODUCT = 128


def _conv_same(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Stride-1 "same" convolution on the compiled direct kernel."""
    dtype = np.result_type(x.dtype, weight.dtype)
    k = weight.shape[-1]
    xd = np.ascontiguousarray(x.data, dtype=dtype)
    wd = np.ascontiguousarray(weight.data, dtype=dtype)
    bd = np.zeros(weight.shape[0], dtype=dtype) if bias is None else np.ascontiguousarray(bias.data, dtype=dtype)
    threads = _kernels.num_threads()
    out = _kernels.conv_same_forward(xd, wd, bd, threads)

    def backward(g):
        g = np.ascontiguousarray(g, dtype=dtype)
        gx = gw = gb = None
        if x.requires_grad:
            # adjoint of "same" correlation: swap channel roles and rotate the kernel
            wt = np.ascontiguousarray(wd.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
            gx = _kernels.conv_same_forward(g, wt, np.zeros(wt.shape[0], dtype=dtype), threads)
        if weight.requires_grad:
            gw = _kernels.conv_same_grad_weight(xd, g, k, threads).astype(weight.dtype, copy=False)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(bias.dtype)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward, "conv2d")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over NCHW input with an (out, in, kh, kw) kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input has {c} channels, kernel expects {ci}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    # the direct kernel wins for few channels (long rows, thin GEMMs); wide layers stay on GEMM
    if (_kernels.compiled is not None and stride == 1 and kh == kw and kh % 2 == 1 and padding == kh // 2
            and c * o <= DIRECT_CONV_MAX_CHANNEL_PRODUCT):
        return _conv_same(x, weight, bias)
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}")

    xd = x.data
    dtype = np.result_type(xd, weight.data)
    if padding:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=xd.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = xd
    else:
        xp = xd
    # columns laid out (C, kh, kw, N, Ho, Wo) so both products below are plain GEMMs
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xd.dtype)
    he, we = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + he:stride, j:j + we:stride]
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    wmat = weight.data.reshape(o, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data.reshape(o, 1)
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3), dtype=dtype)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, n * ho * wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.matmul(g2, cols.T).reshape(weight.shape).astype(weight.dtype, copy=False)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=1, dtype=np.float64).astype(bias.dtype)
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2).reshape(c, kh, kw, n, ho, wo)
            gxp = np.zeros((c, n) + xp.shape[2:], dtype=dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + he:stride, j:j + we:stride] += gcols[:, i, j]
            if padding:
                gxp = gxp[:, :, padding:padding + h, padding:padding + w]
            gx = np.ascontiguousarray(gxp.transpose(1, 0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward, "conv2d")


@lru_cache(maxsize=256)
def _bilinear_matrix(n_in: int, n_out: int, dtype_str: str) -> np.ndarray:
    """Row-stochastic interpolation matrix, half-pixel (align_corners=False) convention."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    out = m.astype(np.dtype(dtype_str))
    out.setflags(write=False)
    return out


def resize_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Bilinear resize of the last two axes to ``size`` (pixel centers at (i+0.5)/N)."""
    h, w = x.shape[-2:]
    ho, wo = size
    if (h, w) == (ho, wo):
        return x
    dt = x.dtype.str
    rh = _bilinear_matrix(h, ho, dt)
    rw = _bilinear_matrix(w, wo, dt)
    out = np.matmul(np.matmul(rh, x.data), rw.T)

    def backward(g):
        return (np.matmul(np.matmul(rh.T, g), rw),)

    return Tensor._result(out, (x,), backward, "resize_bilinear")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes by an integer factor."""
    if factor == 1:
        return x
    out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)
    shape = x.shape

    def backward(g):
        lead = g.shape[:-2]
        g = g.reshape(*lead, shape[-2], factor, shape[-1], factor)
        return (g.sum(axis=(-3, -1)),)

    return Tensor._result(out, (x,), backward, "upsample_nearest")


def resize_nearest(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Nearest resize to ``size``; source index floor((i+0.5)*in/out)."""
    h, w = x.shape[-2:]
    ho, wo = size
    if (h, w) == (ho, wo):
        return x
    if ho % h == 0 and wo % w == 0 and ho // h == wo // w:
        return upsample_nearest(x, ho // h)
    ri = np.minimum(((np.arange(ho) + 0.5) * h / ho).astype(np.int64), h - 1)
    ci = np.minimum(((np.arange(wo) + 0.5) * w / wo).astype(np.int64), w - 1)
    out = x.data[..., ri[:, None], ci[None, :]]
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, (Ellipsis, ri[:, None], ci[None, :]), g)
        return (gx,)

    return Tensor._result(out, (x,), backward, "resize_nearest")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return Tensor._result(out, tensors, backward, "concat")


def where(mask, a: Tensor, b: Tensor | float) -> Tensor:
    """Select ``a`` where ``mask`` else ``b``; the mask is a constant."""
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
    b = b if isinstance(b, Tensor) else Tensor(np.full(a.shape, b), dtype=a.dtype)
    out = np.where(mask, a.data, b.data)

    def backward(g):
        zero = np.zeros((), dtype=g.dtype)
        return unbroadcast(np.where(mask, g, zero), a.shape), unbroadcast(np.where(mask, zero, g), b.shape)

    return Tensor._result(out, (a, b), backward, "where")


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    take_a = a.data <= b.data
    return where(take_a, a, b)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    take_a = a.data >= b.data
    return where(take_a, a, b)


def _box(x: np.ndarray, k: int = 3) -> np.ndarray:
    """k x k mean over the last two axes, zero padded."""
    r = k // 2
    h, w = x.shape[-2:]
    p = np.zeros(x.shape[:-2] + (h + 2 * r, w + 2 * r), dtype=x.dtype)
    p[..., r:r + h, r:r + w] = x
    rows = p[..., 0:h, :].copy()
    for i in range(1, k):
        rows += p[..., i:i + h, :]
    out = rows[..., 0:w].copy()
    for j in range(1, k):
        out += rows[..., j:j + w]
    out *= x.dtype.type(1.0 / (k * k))
    return out


def box_filter(x: Tensor, k: int = 3) -> Tensor:
    """k x k mean filter with zero padding (self-adjoint)."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"box filter size must be odd, got {k}")
    return Tensor._result(_box(x.data, k), (x,), lambda g: (_box(g, k),), "box_filter")


def box_filter3(x: Tensor) -> Tensor:
    return box_filter(x, 3)
