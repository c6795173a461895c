"""Training objectives: photometric error, self-distillation, depth-hint and joint loss."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Tensor, where
from .autodiff.functional import _box
from .geometry import warp

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.85
    beta: float = 0.15
    ssim_window: int = 3

    def __post_init__(self):
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be odd")


def ssim_dissimilarity(x: Tensor, y: Tensor, window: int = 3) -> Tensor:
    """Per-pixel, per-channel (1 - SSIM) / 2 over a zero-padded box window."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    h, w = x.shape[-2:]
    if window > h or window > w:
        raise ValueError(f"SSIM window {window} larger than image {h}x{w}")
    xd, yd = x.data, y.data
    dtype = np.result_type(xd, yd)
    xd = xd.astype(dtype, copy=False)
    yd = yd.astype(dtype, copy=False)
    mx, my = _box(xd, window), _box(yd, window)
    exx, eyy, exy = _box(xd * xd, window), _box(yd * yd, window), _box(xd * yd, window)
    mxy = mx * my
    a1 = 2 * mxy + SSIM_C1
    a2 = 2 * (exy - mxy) + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = (exx - mx * mx) + (eyy - my * my) + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    out = (1 - s) / 2

    def backward(g):
        gs = -0.5 * g * s
        # d s / d stat, already multiplied by the incoming gradient
        g_mx = _box(gs * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2), window)
        g_my = _box(gs * (2 * mx / a1 - 2 * mx / a2 - 2 * my / b1 + 2 * my / b2), window)
        g_sq = _box(-gs / b2, window)
        g_xy = _box(2 * gs / a2, window)
        gx = g_mx + 2 * xd * g_sq + yd * g_xy if x.requires_grad else None
        gy = g_my + 2 * yd * g_sq + xd * g_xy if y.requires_grad else None
        return gx, gy

    return Tensor._result(out, (x, y), backward, "ssim")


def photometric_error_map(target: Tensor, reconstructed: Tensor, weights: LossWeights = LossWeights()) -> Tensor:
    """alpha (1-SSIM)/2 + beta |I - I~|, averaged over channels -> N x 1 x H x W."""
    if target.shape != reconstructed.shape:
        raise ValueError(f"shape mismatch: {target.shape} vs {reconstructed.shape}")
    parts = []
    if weights.alpha:
        parts.append(ssim_dissimilarity(target, reconstructed, weights.ssim_window) * weights.alpha)
    if weights.beta:
        parts.append((target - reconstructed).abs() * weights.beta)
    err = parts[0] if len(parts) == 1 else parts[0] + parts[1]
    return err.mean(axis=1, keepdims=True)


def reconstruction_error(target: Tensor, source: Tensor, disparity: Tensor,
                         weights: LossWeights = LossWeights()) -> Tensor:
    """Photometric error of the source warped into the target by ``disparity``."""
    return photometric_error_map(target, warp(source, disparity), weights)


def log_l1(a: Tensor, b: Tensor) -> Tensor:
    return ((a - b).abs() + 1.0).log()


def self_distillation_loss(disp: Tensor, label: Tensor) -> Tensor:
    """mean log(|y - d| + 1); the label must not carry gradient."""
    if label.requires_grad:
        raise ValueError("distillation label must be detached")
    if disp.shape != label.shape:
        raise ValueError(f"shape mismatch: {disp.shape} vs {label.shape}")
    return log_l1(label, disp).mean()


def hint_loss_map(disp: Tensor, hint: Tensor, hint_valid, e_pred, e_hint) -> Tensor:
    """Depth-hint loss, active only where the hint reconstructs better.

    Returns the mean over all pixels of log(|h - d| + 1) on active pixels
    (inactive pixels contribute 0). The activity mask is a constant.
    """
    e_pred = np.asarray(getattr(e_pred, "data", e_pred))
    e_hint = np.asarray(getattr(e_hint, "data", e_hint))
    valid = np.asarray(getattr(hint_valid, "data", hint_valid)).astype(bool)
    shapes = {disp.shape, hint.shape, e_pred.shape, e_hint.shape, valid.shape}
    if len(shapes) != 1:
        raise ValueError(f"hint loss inputs disagree in shape: {shapes}")
    if hint.requires_grad:
        hint = hint.detach()
    active = (e_hint < e_pred) & valid
    return where(active, log_l1(hint, disp), 0.0).mean()


@dataclass
class LossBreakdown:
    """Per-scale terms (as floats) and the differentiable total."""

    total: Tensor
    photometric: dict[str, float] = field(default_factory=dict)
    distill: dict[str, float] = field(default_factory=dict)
    hint: dict[str, float] = field(default_factory=dict)
    grad_norm: float = float("nan")  # filled in by the trainer after backward

    @property
    def scales(self) -> list[str]:
        return list(self.photometric)

    def as_row(self) -> dict[str, float]:
        row = {"total": self.total.item()}
        for name in self.photometric:
            row[f"ph_{name}"] = self.photometric[name]
            row[f"sd_{name}"] = self.distill[name]
            row[f"h_{name}"] = self.hint[name]
        return row


def _scale_items(scales) -> list[tuple[str, Tensor]]:
    if hasattr(scales, "items"):
        return list(scales.items())
    return list(scales)


def joint_loss(scales, target: Tensor, source: Tensor, labels: tuple | None = None,
               hint: Tensor | None = None, hint_valid=None, weights: LossWeights = LossWeights(),
               error_maps: Mapping[str, Tensor] | None = None, e_hint=None) -> LossBreakdown:
    """Average over scales of photometric + self-distillation + hint loss.

    ``scales`` yields (name, disparity) pairs; names starting with ``e`` are
    encoder scales and use the encoder label ``labels[0]``, all others the
    decoder label ``labels[1]``. Labels may be DistillLabel objects or tensors;
    ``None`` (or ``labels=None``) disables that term. Precomputed ``error_maps``
    (name -> photometric error map on the tape) are reused when given.
    """
    items = _scale_items(scales)
    if not items:
        raise ValueError("joint_loss needs at least one disparity scale")
    y_e, y_d = labels if labels is not None else (None, None)
    y_e = getattr(y_e, "y", y_e)
    y_d = getattr(y_d, "y", y_d)
    use_hint = hint is not None and hint_valid is not None
    if use_hint and e_hint is None:
        e_hint = reconstruction_error(target, source, hint.detach(), weights).data

    total = None
    out = LossBreakdown(total=None)  # type: ignore[arg-type]
    for name, d in items:
        err = error_maps[name] if error_maps is not None and name in error_maps else \
            reconstruction_error(target, source, d, weights)
        term = err.mean()
        out.photometric[name] = term.item()
        label = y_e if name.startswith("e") else y_d
        sd = 0.0
        if label is not None:
            l_sd = self_distillation_loss(d, label)
            sd = l_sd.item()
            term = term + l_sd
        h = 0.0
        if use_hint:
            l_h = hint_loss_map(d, hint, hint_valid, err.data, e_hint)
            h = l_h.item()
            term = term + l_h
        out.distill[name] = sd
        out.hint[name] = h
        total = term if total is None else total + term
    out.total = total * (1.0 / len(items))
    return out
