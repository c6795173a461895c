"""Pure-numpy versions of the compiled kernels (same signatures, same results)."""
from __future__ import annotations

import numpy as np

DIR_Y = (0, 0, 1, -1, 1, 1, -1, -1)
DIR_X = (1, -1, 0, 0, 1, -1, 1, -1)


def _sample_coords(disp, sign, w):
    raw = np.arange(w, dtype=np.float64) - sign * disp.astype(np.float64)
    xs = np.clip(raw, 0.0, w - 1)
    x0 = np.floor(xs).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    a = xs - x0
    inside = (raw >= 0) & (raw <= w - 1)
    return x0, x1, a, inside


def warp_forward(src, disp, sign, num_threads=1):
    n, c, h, w = src.shape
    x0, x1, a = _sample_coords(disp, sign, w)[:3]
    s0 = np.take_along_axis(src, np.broadcast_to(x0[:, None], src.shape), axis=3)
    s1 = np.take_along_axis(src, np.broadcast_to(x1[:, None], src.shape), axis=3)
    a = a[:, None]
    return ((1.0 - a) * s0 + a * s1).astype(src.dtype)


def warp_backward(src, disp, sign, gout, need_src=True, num_threads=1):
    n, c, h, w = src.shape
    x0, x1, a, inside = _sample_coords(disp, sign, w)
    idx0 = np.broadcast_to(x0[:, None], src.shape)
    idx1 = np.broadcast_to(x1[:, None], src.shape)
    s0 = np.take_along_axis(src, idx0, axis=3)
    s1 = np.take_along_axis(src, idx1, axis=3)
    gd = -sign * (gout.astype(np.float64) * (s1 - s0)).sum(axis=1)
    gd = np.where(inside, gd, 0.0).astype(src.dtype)
    gsrc = None
    if need_src:
        a4 = a[:, None]
        # scatter along rows: flatten (n, c, y) into independent row ids
        rows = np.arange(n * c * h).reshape(n, c, h, 1) * w
        acc = np.bincount((rows + idx0).ravel(), weights=((1.0 - a4) * gout).ravel(), minlength=n * c * h * w)
        acc += np.bincount((rows + idx1).ravel(), weights=(a4 * gout).ravel(), minlength=n * c * h * w)
        gsrc = acc.reshape(src.shape).astype(src.dtype)
    return gsrc, gd


def census(img, win):
    h, w = img.shape
    r = win // 2
    nbits = win * win - 1
    nwords = (nbits + 63) // 64
    pad = np.pad(img, r, mode="edge")
    out = np.zeros((h, w, nwords), dtype=np.uint64)
    bit = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            nb = pad[r + dy:r + dy + h, r + dx:r + dx + w]
            set_ = (nb < img).astype(np.uint64)
            out[:, :, bit >> 6] |= set_ << np.uint64(bit & 63)
            bit += 1
    return out


def cost_volume(cl, cr, max_disp, max_cost):
    h, w, _ = cl.shape
    out = np.full((h, w, max_disp), max_cost, dtype=np.float32)
    for d in range(max_disp):
        if d >= w:
            break
        x = np.bitwise_xor(cl[:, d:], cr[:, :w - d])
        out[:, d:, d] = np.bitwise_count(x).sum(axis=-1)
    return out


def _step(prev, c, p1, p2):
    """One SGM recurrence step; ``prev`` and ``c`` are (..., D)."""
    minprev = prev.min(axis=-1, keepdims=True)
    best = prev.copy()
    np.minimum(best[..., 1:], prev[..., :-1] + p1, out=best[..., 1:])
    np.minimum(best[..., :-1], prev[..., 1:] + p1, out=best[..., :-1])
    np.minimum(best, minprev + p2, out=best)
    return c + best - minprev


def _aggregate_path(cost, dy, dx, p1, p2):
    h, w, nd = cost.shape
    lr = np.empty_like(cost)
    p1 = np.float32(p1)
    p2 = np.float32(p2)
    if dy == 0:
        cols = range(w) if dx > 0 else range(w - 1, -1, -1)
        first = True
        for x in cols:
            if first:
                lr[:, x] = cost[:, x]
                first = False
            else:
                lr[:, x] = _step(lr[:, x - dx], cost[:, x], p1, p2)
        return lr
    rows = range(h) if dy > 0 else range(h - 1, -1, -1)
    first = True
    for y in rows:
        if first:
            lr[y] = cost[y]
            first = False
            continue
        prev_row = lr[y - dy]
        if dx == 0:
            lr[y] = _step(prev_row, cost[y], p1, p2)
        elif dx > 0:
            lr[y, 0] = cost[y, 0]
            lr[y, 1:] = _step(prev_row[:-1], cost[y, 1:], p1, p2)
        else:
            lr[y, -1] = cost[y, -1]
            lr[y, :-1] = _step(prev_row[1:], cost[y, :-1], p1, p2)
    return lr


def aggregate(cost, p1, p2, paths, num_threads=1):
    if paths not in (4, 8):
        raise ValueError("paths must be 4 or 8")
    cost = np.ascontiguousarray(cost, dtype=np.float32)
    out = _aggregate_path(cost, DIR_Y[0], DIR_X[0], p1, p2)
    for k in range(1, paths):
        out += _aggregate_path(cost, DIR_Y[k], DIR_X[k], p1, p2)
    return out


def _same_cols(x, k):
    """(C*k*k, N*H*W) columns of a zero-padded input."""
    n, c, h, w = x.shape
    r = k // 2
    xp = np.zeros((c, n, h + 2 * r, w + 2 * r), dtype=x.dtype)
    xp[:, :, r:r + h, r:r + w] = x.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, n, h, w), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(c * k * k, n * h * w)


def conv_same_forward(x, weight, bias, num_threads=1):
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    out = weight.reshape(o, -1) @ _same_cols(x, k) + bias.reshape(o, 1)
    return np.ascontiguousarray(out.reshape(o, n, h, w).transpose(1, 0, 2, 3))


def conv_same_grad_weight(x, gout, k, num_threads=1):
    o = gout.shape[1]
    g2 = gout.transpose(1, 0, 2, 3).reshape(o, -1).astype(np.float64)
    gw = g2 @ _same_cols(x, k).astype(np.float64).T
    return gw.reshape(o, x.shape[1], k, k).astype(x.dtype)
