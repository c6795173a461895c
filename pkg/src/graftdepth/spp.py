"""Selective post-processing: per-pixel choice of the best-reconstructing scale.

The running minimum of the photometric error decides, scale by scale, which
prediction becomes the self-distillation label. Comparison is strict, so the
earliest listed scale keeps ties.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, no_grad, resize_bilinear
from .losses import LossWeights, reconstruction_error


@dataclass
class DistillLabel:
    y: Tensor  # detached disparity label, N x 1 x H x W
    e_min: np.ndarray  # running-minimum error map
    source_scale: np.ndarray  # index (into the scale list) of the winning scale

    def win_fractions(self, n_scales: int) -> np.ndarray:
        counts = np.bincount(self.source_scale.ravel(), minlength=n_scales)
        return counts / self.source_scale.size


def select_from_errors(disps: Sequence[np.ndarray], errors: Sequence[np.ndarray]) -> DistillLabel:
    """Fold scales in order, replacing the label only where the error is strictly smaller."""
    if len(disps) == 0:
        raise ValueError("selective post-processing needs at least one scale")
    if len(disps) != len(errors):
        raise ValueError("one error map per disparity map is required")
    y = np.array(disps[0], dtype=np.float32, copy=True)
    e_min = np.array(errors[0], copy=True)
    src = np.zeros(y.shape, dtype=np.int16)
    for k in range(1, len(disps)):
        better = errors[k] < e_min
        y[better] = np.asarray(disps[k], dtype=np.float32)[better]
        e_min[better] = errors[k][better]
        src[better] = k
    return DistillLabel(y=Tensor(y), e_min=e_min, source_scale=src)


def _full_res(d, size) -> Tensor:
    d = d if isinstance(d, Tensor) else Tensor(np.asarray(d, dtype=np.float32))
    if d.ndim == 3:
        d = d.reshape(d.shape[0], 1, *d.shape[1:])
    return resize_bilinear(d.detach(), size)


def selective_post_process(target: Tensor, source: Tensor, scale_disps: Sequence,
                           weights: LossWeights = LossWeights()) -> DistillLabel:
    """Build a label from disparity maps, each upsampled (bilinear) to the target size first."""
    if len(scale_disps) == 0:
        raise ValueError("selective post-processing needs at least one scale")
    size = target.shape[-2:]
    disps, errors = [], []
    with no_grad():
        for d in scale_disps:
            up = _full_res(d, size)
            disps.append(up.data)
            errors.append(reconstruction_error(target, source, up, weights).data)
    return select_from_errors(disps, errors)


DECODER = ("d0", "d1", "d2", "d3", "d4")
ENCODER = ("e0", "e1", "e2", "e3", "e4")


def build_labels(target: Tensor, source: Tensor, scales, weights: LossWeights = LossWeights(),
                 mode: str = "separate", error_maps=None) -> tuple[DistillLabel | None, DistillLabel | None]:
    """Encoder label from e0..e4 and decoder label from d0..d4.

    ``mode="combined"`` folds all scales (decoder first) into one label used for
    both. Precomputed error maps (name -> array or Tensor) skip re-warping.
    Returns ``(y_e, y_d)``; a side without scales gets None.
    """
    named = dict(scales.items() if hasattr(scales, "items") else scales)
    size = target.shape[-2:]

    def label_for(names):
        names = [n for n in names if n in named]
        if not names:
            return None
        if error_maps is None:
            return selective_post_process(target, source, [named[n] for n in names], weights)
        disps = [_full_res(named[n], size).data for n in names]
        errors = [np.asarray(getattr(error_maps[n], "data", error_maps[n])) for n in names]
        return select_from_errors(disps, errors)

    if mode == "separate":
        return label_for(ENCODER), label_for(DECODER)
    if mode == "combined":
        both = label_for(DECODER + ENCODER)
        return both, both
    raise ValueError(f"unknown label mode {mode!r}")
