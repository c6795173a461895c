"""Standard monocular depth metrics, model evaluation and reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .geometry import disparity_to_depth, flip_post_process

METRIC_ORDER = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3")
MIN_DEPTH = 1e-3


@dataclass
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_ORDER}

    @classmethod
    def mean(cls, items) -> "DepthMetrics":
        items = list(items)
        if not items:
            raise ValueError("no metrics to average")
        return cls(**{k: float(np.mean([getattr(m, k) for m in items])) for k in METRIC_ORDER})


@dataclass
class EvalOptions:
    cap: float = 80.0
    median_scaling: bool = False
    garg_crop: bool = False


def garg_crop_mask(h: int, w: int) -> np.ndarray:
    """Rows 0.40810811..0.99189189 of h, columns 0.03594771..0.96405229 of w."""
    m = np.zeros((h, w), dtype=bool)
    m[int(0.40810811 * h):int(0.99189189 * h), int(0.03594771 * w):int(0.96405229 * w)] = True
    return m


def compute_metrics(pred_depth, gt_depth, opts: EvalOptions = EvalOptions(), mask=None) -> DepthMetrics:
    """Metrics over pixels with gt > 0 (and inside ``mask`` / the crop)."""
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    valid = gt > 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    if opts.garg_crop:
        if gt.ndim != 2:
            raise ValueError("garg crop needs 2-D depth maps")
        valid &= garg_crop_mask(*gt.shape)
    if not valid.any():
        raise ValueError("no valid ground-truth pixels")
    p, g = pred[valid], gt[valid]
    if opts.median_scaling:
        p = p * (np.median(g) / np.median(p))
    p = np.clip(p, MIN_DEPTH, opts.cap)
    g = np.clip(g, MIN_DEPTH, opts.cap)
    thresh = np.maximum(g / p, p / g)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(g - p) / g)),
        sq_rel=float(np.mean((g - p) ** 2 / g)),
        rmse=float(np.sqrt(np.mean((g - p) ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(g) - np.log(p)) ** 2))),
        delta1=float(np.mean(thresh < 1.25)),
        delta2=float(np.mean(thresh < 1.25 ** 2)),
        delta3=float(np.mean(thresh < 1.25 ** 3)),
    )


def _chw(img):
    return np.ascontiguousarray(np.asarray(img, dtype=np.float32).transpose(2, 0, 1))


def predict_disparity(model, images: np.ndarray, scale: str = "d0", flip_pp: bool = False) -> np.ndarray:
    """Disparity maps (N x H x W) from an N x 3 x H x W batch."""
    with no_grad():
        d = model(Tensor(images))[scale].data[:, 0]
        if flip_pp:
            df = model(Tensor(np.ascontiguousarray(images[..., ::-1])))[scale].data[:, 0]
            d = flip_post_process(d, df[..., ::-1])
    return d


def evaluate_model(model, samples, opts: EvalOptions = EvalOptions(), scale: str = "d0",
                   flip_pp: bool = False, batch_size: int = 8):
    """Mean metrics over ``samples`` (with gt) and the per-sample list."""
    samples = [s for s in samples if s.gt_disparity is not None]
    if not samples:
        raise ValueError("no samples with ground truth")
    per_sample = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        imgs = np.stack([_chw(s.left) for s in chunk])
        disp = predict_disparity(model, imgs, scale, flip_pp)
        for s, d in zip(chunk, disp):
            gt_depth = np.where(s.gt_disparity > 0, disparity_to_depth(s.gt_disparity, s.rig), 0.0)
            m = compute_metrics(disparity_to_depth(d, s.rig), gt_depth, opts)
            per_sample.append((s.sample_id, m))
    return DepthMetrics.mean(m for _, m in per_sample), per_sample


def write_csv(per_sample, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("sample_id",) + METRIC_ORDER)
        for sid, m in per_sample:
            w.writerow([sid] + [f"{getattr(m, k):.6f}" for k in METRIC_ORDER])
        if per_sample:
            mean = DepthMetrics.mean(m for _, m in per_sample)
            w.writerow(["mean"] + [f"{getattr(mean, k):.6f}" for k in METRIC_ORDER])


def format_summary(metrics: DepthMetrics, title: str = "") -> str:
    head = " | ".join(f"{k:>8s}" for k in METRIC_ORDER)
    vals = " | ".join(f"{getattr(metrics, k):8.4f}" for k in METRIC_ORDER)
    lines = [title] if title else []
    return "\n".join(lines + [head, vals]) + "\n"
