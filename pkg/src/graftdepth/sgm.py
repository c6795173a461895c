"""Semi-global matching proxy labels ("depth hints") and their on-disk cache."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .autodiff import Tensor, no_grad, serialize
from .losses import LossWeights, reconstruction_error


@dataclass(frozen=True)
class SgmParams:
    max_disp: int | None = None  # None -> ceil(0.3 * width)
    p1: float = 8.0
    p2: float = 96.0
    paths: int = 8
    census_window: int = 5
    lr_threshold: float = 1.0
    uniqueness: float = 0.02  # best cost must beat the runner-up (|d - d*| > 1) by this fraction
    subpixel: bool = True

    def __post_init__(self):
        if self.census_window < 3 or self.census_window % 2 == 0 or self.census_window > 9:
            raise ValueError("census_window must be odd and in [3, 9]")
        if self.paths not in (4, 8):
            raise ValueError("paths must be 4 or 8")
        if self.max_disp is not None and self.max_disp < 2:
            raise ValueError("max_disp must be >= 2")

    def disparities(self, width: int) -> int:
        return self.max_disp if self.max_disp is not None else math.ceil(0.3 * width)


# three configurations fused per pixel by reconstruction error
FUSION_CONFIGS = (SgmParams(census_window=5), SgmParams(census_window=7), SgmParams(census_window=9))


@dataclass
class HintMap:
    disparity: np.ndarray  # H x W, 0 where invalid
    valid: np.ndarray  # H x W bool

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        self.disparity = np.where(self.valid, self.disparity, 0).astype(np.float32)


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        return np.ascontiguousarray(img)
    if img.ndim == 3 and img.shape[-1] == 3:
        return np.ascontiguousarray(img @ np.array([0.299, 0.587, 0.114], dtype=np.float32))
    if img.ndim == 3 and img.shape[0] == 3:
        return to_gray(img.transpose(1, 2, 0))
    raise ValueError(f"expected an H x W or H x W x 3 image, got {img.shape}")


def cost_volume(left: np.ndarray, right: np.ndarray, params: SgmParams = SgmParams()) -> np.ndarray:
    """Census Hamming costs, H x W x D, left-referenced."""
    gl, gr = to_gray(left), to_gray(right)
    if gl.shape != gr.shape:
        raise ValueError(f"stereo pair shapes differ: {gl.shape} vs {gr.shape}")
    nd = params.disparities(gl.shape[1])
    if nd >= gl.shape[1]:
        raise ValueError(f"max_disp {nd} must be smaller than the width {gl.shape[1]}")
    win = params.census_window
    cl = _kernels.census(gl, win)
    cr = _kernels.census(gr, win)
    return _kernels.cost_volume(cl, cr, nd, float(win * win - 1))


def aggregate_paths(cost: np.ndarray, params: SgmParams = SgmParams()) -> np.ndarray:
    return _kernels.aggregate(np.ascontiguousarray(cost, dtype=np.float32), params.p1, params.p2,
                              params.paths, _kernels.num_threads())


def _right_volume(agg: np.ndarray) -> np.ndarray:
    """Right-referenced volume S_R(x, d) = S_L(x + d, d)."""
    h, w, nd = agg.shape
    out = np.full_like(agg, np.inf)
    for d in range(nd):
        out[:, :w - d, d] = agg[:, d:, d]
    return out


def _wta(vol: np.ndarray, subpixel: bool) -> np.ndarray:
    best = np.argmin(vol, axis=-1)
    disp = best.astype(np.float64)
    if subpixel:
        nd = vol.shape[-1]
        inner = (best > 0) & (best < nd - 1)
        b = np.clip(best, 1, nd - 2)[..., None]
        c0 = np.take_along_axis(vol, b - 1, -1)[..., 0].astype(np.float64)
        c1 = np.take_along_axis(vol, b, -1)[..., 0].astype(np.float64)
        c2 = np.take_along_axis(vol, b + 1, -1)[..., 0].astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            denom = c0 - 2 * c1 + c2
            off = np.where(inner & (denom > 0) & np.isfinite(denom), (c0 - c2) / (2 * denom), 0.0)
        disp = disp + np.clip(off, -0.5, 0.5)
    return disp


def _unique(agg: np.ndarray, best: np.ndarray, ratio: float) -> np.ndarray:
    """True where the runner-up outside best +- 1 is clearly worse."""
    nd = agg.shape[-1]
    idx = np.arange(nd)
    far = np.abs(idx[None, None, :] - best[..., None]) > 1
    runner = np.where(far, agg, np.inf).min(axis=-1)
    b = np.take_along_axis(agg, best[..., None], -1)[..., 0]
    return runner > b * (1 + ratio)


def compute_hint(left: np.ndarray, right: np.ndarray, params: SgmParams = SgmParams()) -> HintMap:
    """SGM disparity for the left view with left-right and uniqueness checks."""
    cost = cost_volume(left, right, params)
    agg = aggregate_paths(cost, params)
    w, nd = agg.shape[1:]
    best = np.argmin(agg, axis=-1)
    d_left = _wta(agg, params.subpixel)
    d_right = _wta(_right_volume(agg), params.subpixel)
    xs = np.arange(w)[None, :]
    xr = np.round(xs - d_left).astype(np.int64)
    inside = (xr >= 0) & (xr < w)
    back = np.take_along_axis(d_right, np.clip(xr, 0, w - 1), axis=1)
    consistent = inside & (np.abs(back - d_left) <= params.lr_threshold)
    # raw matching costs must vary over the in-range candidates; constant rows carry no evidence
    in_range = np.arange(nd)[None, None, :] <= xs[..., None]
    spread = np.where(in_range, cost, -np.inf).max(-1) - np.where(in_range, cost, np.inf).min(-1)
    evidence = (xs >= best) & (spread > 0)
    valid = consistent & evidence & _unique(agg, best, params.uniqueness)
    return HintMap(d_left.astype(np.float32), valid)


def _chw(img):
    img = np.asarray(img, dtype=np.float32)
    return img.transpose(2, 0, 1)[None] if img.ndim == 3 and img.shape[-1] == 3 else img[None]


def hint_error(left, right, disparity, weights: LossWeights = LossWeights()) -> np.ndarray:
    """Photometric error map (H x W) of reconstructing ``left`` from ``right``."""
    with no_grad():
        e = reconstruction_error(Tensor(_chw(left)), Tensor(_chw(right)),
                                 Tensor(np.asarray(disparity, np.float32)[None, None]), weights)
    return e.data[0, 0]


def fuse_hints(candidates, left, right, weights: LossWeights = LossWeights()) -> HintMap:
    """Per pixel, keep the valid candidate with the lowest reconstruction error."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("fuse_hints needs at least one candidate")
    best_err = np.full(candidates[0].disparity.shape, np.inf)
    disp = np.zeros_like(candidates[0].disparity)
    for c in candidates:
        e = np.where(c.valid, hint_error(left, right, c.disparity, weights), np.inf)
        better = e < best_err
        disp[better] = c.disparity[better]
        best_err[better] = e[better]
    return HintMap(disp, np.isfinite(best_err))


def compute_fused_hint(left, right, configs=FUSION_CONFIGS, max_disp: int | None = None) -> HintMap:
    if max_disp is not None:
        configs = [replace(c, max_disp=max_disp) for c in configs]
    return fuse_hints([compute_hint(left, right, c) for c in configs], left, right)


# -- cache ------------------------------------------------------------------------

def hint_paths(root, sample_id: str) -> tuple[Path, Path]:
    d = Path(root) / "hints"
    return d / f"{sample_id}.epct", d / f"{sample_id}.valid.epct"


def save_hint(hint: HintMap, root, sample_id: str) -> None:
    pd, pv = hint_paths(root, sample_id)
    pd.parent.mkdir(parents=True, exist_ok=True)
    serialize.save(pd, hint.disparity)
    serialize.save(pv, hint.valid.astype(np.float32))


def load_hint(root, sample_id: str) -> HintMap:
    pd, pv = hint_paths(root, sample_id)
    if not pd.exists() or not pv.exists():
        raise FileNotFoundError(f"no cached hint for {sample_id} under {Path(root) / 'hints'}")
    disp = serialize.load(pd)
    valid = serialize.load(pv)
    if disp.shape != valid.shape:
        raise serialize.FormatError(f"hint files for {sample_id} disagree in shape")
    return HintMap(disp, valid > 0.5)


def has_hint(root, sample_id: str) -> bool:
    return all(p.exists() for p in hint_paths(root, sample_id))
