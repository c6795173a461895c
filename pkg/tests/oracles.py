"""Slow, loop-based reference implementations used as independent oracles.

Nothing here imports the package's numerical code; only plain numpy and loops.
"""
from fractions import Fraction
import math

import numpy as np


def graft_literal(I1, I2, r, flip):
    """Line-by-line transcription of the grafting algorithm for one input.

    I1, I2: C x H x W arrays. r: grafting ratio as a Fraction (or anything
    exact). flip: the drawn coin; flip < 0.5 triggers the block swap.
    """
    I1 = np.array(I1, copy=True)
    _, h, _ = I1.shape
    if r == 0:
        return I1
    graft_h = math.ceil(Fraction(h) * Fraction(r))
    I1[:, graft_h:, :] = I2[:, graft_h:, :]
    if flip < 0.5:
        T = I1.copy()
        I1[:, h - graft_h:, :] = T[:, :graft_h, :]
        I1[:, :h - graft_h, :] = T[:, graft_h:, :]
    return I1


def warp_loop(src, disp):
    """Per-pixel bilinear horizontal warp: out(x) = src(x - d), border clamped."""
    c, h, w = src.shape
    out = np.zeros_like(src, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            xs = min(max(x - float(disp[y, x]), 0.0), w - 1.0)
            x0 = int(math.floor(xs))
            x1 = min(x0 + 1, w - 1)
            a = xs - x0
            for ch in range(c):
                out[ch, y, x] = (1 - a) * src[ch, y, x0] + a * src[ch, y, x1]
    return out


def ssim_dissim_loop(x, y, k=3, c1=0.01 ** 2, c2=0.03 ** 2):
    """(1 - SSIM)/2 per pixel for 2-D arrays, windows zero padded (mean over k*k incl. zeros)."""
    h, w = x.shape
    r = k // 2
    xp = np.pad(x.astype(np.float64), r)
    yp = np.pad(y.astype(np.float64), r)
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            a = xp[i:i + k, j:j + k]
            b = yp[i:i + k, j:j + k]
            mx, my = a.mean(), b.mean()
            vx = (a * a).mean() - mx * mx
            vy = (b * b).mean() - my * my
            cxy = (a * b).mean() - mx * my
            s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
            out[i, j] = (1 - s) / 2
    return out


def conv_loop(x, w, b, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    out = np.zeros((n, o, ho, wo))
    for bi in range(n):
        for oi in range(o):
            for y in range(ho):
                for xx in range(wo):
                    out[bi, oi, y, xx] = b[oi] + np.sum(w[oi] * xp[bi, :, y:y + k, xx:xx + k])
    return out


def spp_fold(disps, errors):
    """Pixel loop over the selection rule: replace only on strictly smaller error."""
    y = np.array(disps[0], dtype=np.float64)
    e = np.array(errors[0], dtype=np.float64)
    src = np.zeros(y.shape, dtype=int)
    for idx in np.ndindex(y.shape):
        for k in range(1, len(disps)):
            if errors[k][idx] < e[idx]:
                e[idx] = errors[k][idx]
                y[idx] = disps[k][idx]
                src[idx] = k
    return y, e, src


def metrics_loop(pred, gt):
    """Textbook definitions, one pixel at a time."""
    n = len(gt)
    abs_rel = sum(abs(g - p) / g for p, g in zip(pred, gt)) / n
    sq_rel = sum((g - p) ** 2 / g for p, g in zip(pred, gt)) / n
    rmse = math.sqrt(sum((g - p) ** 2 for p, g in zip(pred, gt)) / n)
    rmse_log = math.sqrt(sum((math.log(g) - math.log(p)) ** 2 for p, g in zip(pred, gt)) / n)
    d = [max(g / p, p / g) for p, g in zip(pred, gt)]
    return dict(abs_rel=abs_rel, sq_rel=sq_rel, rmse=rmse, rmse_log=rmse_log,
                delta1=sum(t < 1.25 for t in d) / n, delta2=sum(t < 1.25 ** 2 for t in d) / n,
                delta3=sum(t < 1.25 ** 3 for t in d) / n)


def adam_reference(theta, grads, lr, b1, b2, eps):
    """Textbook Adam (Kingma & Ba, Algorithm 1) over a list of gradients, scalar-wise."""
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
    return theta


def sgm_path_1d(cost, p1, p2):
    """Left-to-right SGM recurrence on one row (W x D), straight from the definition."""
    w, nd = cost.shape
    L = np.zeros((w, nd))
    L[0] = cost[0]
    for x in range(1, w):
        prev = L[x - 1]
        mn = prev.min()
        for d in range(nd):
            cands = [prev[d], mn + p2]
            if d > 0:
                cands.append(prev[d - 1] + p1)
            if d < nd - 1:
                cands.append(prev[d + 1] + p1)
            L[x, d] = cost[x, d] + min(cands) - mn
    return L


def census_loop(img, win):
    """Bit string per pixel: neighbour < centre, row-major window order without the centre, edges replicated."""
    h, w = img.shape
    r = win // 2
    bits = np.zeros((h, w, win * win - 1), dtype=bool)
    for y in range(h):
        for x in range(w):
            b = 0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    if dy == 0 and dx == 0:
                        continue
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    bits[y, x, b] = img[yy, xx] < img[y, x]
                    b += 1
    return bits


def random_dot_pair(h, w, disp, seed=0):
    """Random-dot stereogram: left(x) = right(x - disp), fresh dots fill the exposed strip.

    Dots take random grey levels; binary dots leave census codes of dark pixels all zero.
    """
    rng = np.random.default_rng(seed)
    wide = rng.random((h, w + disp)).astype(np.float32)
    left = wide[:, :w].copy()
    right = wide[:, disp:disp + w].copy()
    return left, right
