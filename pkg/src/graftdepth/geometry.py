"""Stereo view synthesis, disparity/depth conversion and flip post-processing.

Convention: the left image is the target and positive disparity means the
matching right-image pixel lies to the left, i.e. ``I_left(x) ~ I_right(x - d)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .autodiff import Tensor

SOURCE_IS_RIGHT = "source-is-right"
SOURCE_IS_LEFT = "source-is-left"


@dataclass(frozen=True)
class CameraRig:
    baseline: float  # meters
    focal: float  # pixels

    def __post_init__(self):
        if not (self.baseline > 0 and self.focal > 0):
            raise ValueError(f"baseline and focal must be positive, got {self.baseline}, {self.focal}")

    @property
    def bf(self) -> float:
        return self.baseline * self.focal


def _direction_sign(direction: str) -> int:
    if direction in (SOURCE_IS_RIGHT, "right"):
        return 1
    if direction in (SOURCE_IS_LEFT, "left"):
        return -1
    raise ValueError(f"unknown warp direction {direction!r}")


def warp(source: Tensor, disparity: Tensor, direction: str = SOURCE_IS_RIGHT) -> Tensor:
    """Bilinearly resample ``source`` along rows by ``disparity`` (border clamped).

    ``source`` is N x C x H x W, ``disparity`` N x 1 x H x W (or N x H x W).
    Gradients flow to both the source image and the disparity.
    """
    sign = _direction_sign(direction)
    if source.ndim != 4:
        raise ValueError(f"source must be N x C x H x W, got {source.shape}")
    n, c, h, w = source.shape
    disp_shape = disparity.shape
    if disp_shape not in ((n, 1, h, w), (n, h, w)):
        raise ValueError(f"disparity shape {disp_shape} does not match source {source.shape}")
    dtype = np.result_type(source.dtype, disparity.dtype)
    src = np.ascontiguousarray(source.data, dtype=dtype)
    disp = np.ascontiguousarray(disparity.data.reshape(n, h, w), dtype=dtype)
    threads = _kernels.num_threads()
    out = _kernels.warp_forward(src, disp, sign, threads)

    def backward(g):
        g = np.ascontiguousarray(g, dtype=dtype)
        gsrc, gdisp = _kernels.warp_backward(src, disp, sign, g, source.requires_grad, threads)
        return gsrc, gdisp.reshape(disp_shape)

    return Tensor._result(out, (source, disparity), backward, "warp")


def warp_array(source: np.ndarray, disparity: np.ndarray, direction: str = SOURCE_IS_RIGHT) -> np.ndarray:
    """Warp a single H x W or H x W x C numpy image (no gradient tracking)."""
    img = np.asarray(source)
    chw = img.transpose(2, 0, 1)[None] if img.ndim == 3 else img[None, None]
    d = np.asarray(disparity, dtype=np.float32)[None]
    out = warp(Tensor(chw), Tensor(d)).data[0]
    return out.transpose(1, 2, 0) if img.ndim == 3 else out[0]


def disparity_to_depth(disparity, rig: CameraRig, min_disp: float = 1e-3) -> np.ndarray:
    """z = b f / max(d, min_disp)."""
    if min_disp <= 0:
        raise ValueError("min_disp must be positive")
    d = np.asarray(getattr(disparity, "data", disparity), dtype=np.float64)
    return rig.bf / np.maximum(d, min_disp)


def depth_to_disparity(depth, rig: CameraRig) -> np.ndarray:
    z = np.asarray(getattr(depth, "data", depth), dtype=np.float64)
    return rig.bf / z


def pp_weight(width: int, ramp: float = 0.05) -> np.ndarray:
    """Per-column weight of the direct prediction in flip post-processing.

    0.5 in the middle; ramps to 0 over the leftmost ``2*ramp`` of the columns
    (where the direct prediction is occluded) and to 1 on the right.
    """
    xs = np.linspace(0.0, 1.0, width)
    left = 1.0 - np.clip((xs - ramp) / ramp, 0.0, 1.0)
    right = left[::-1]
    return 0.5 + 0.5 * (right - left)


def flip_post_process(disp, disp_of_flipped_input, ramp: float = 0.05) -> np.ndarray:
    """Blend a prediction with the (already back-flipped) prediction on the mirrored image."""
    a = np.asarray(getattr(disp, "data", disp))
    b = np.asarray(getattr(disp_of_flipped_input, "data", disp_of_flipped_input))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    w = pp_weight(a.shape[-1], ramp).astype(a.dtype)
    # b + w (a - b): exact when both maps agree
    return b + w * (a - b)
