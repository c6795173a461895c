"""Data grafting: vertical recomposition of two same-category inputs in a batch.

Rows below ``ceil(h * r)`` are taken from a partner sample, optionally followed
by a vertical circular shift that moves the kept top block to the bottom. Rows
are never mixed horizontally, so rectified stereo correspondence survives.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RATIO_STEPS = 5  # r = n / 5, n in {0, 1, 2, 3, 4}


@dataclass(frozen=True)
class GraftConfig:
    ratio_n: int  # grafting ratio is ratio_n / 5
    swap: bool
    partners: tuple[int, ...]

    def __post_init__(self):
        if not 0 <= self.ratio_n < RATIO_STEPS:
            raise ValueError(f"ratio_n must be in [0, {RATIO_STEPS}), got {self.ratio_n}")

    @property
    def ratio(self) -> float:
        return self.ratio_n / RATIO_STEPS

    def graft_rows(self, h: int) -> int:
        """ceil(h * r) in exact integer arithmetic."""
        return (h * self.ratio_n + RATIO_STEPS - 1) // RATIO_STEPS


def sample_config(rng: np.random.Generator, batch_size: int) -> GraftConfig:
    """Draw r uniformly from {0, .2, .4, .6, .8}, a fair swap coin, cyclic partners."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = int(rng.integers(0, RATIO_STEPS))
    swap = bool(rng.random() < 0.5)
    partners = tuple((i + 1) % batch_size for i in range(batch_size))
    return GraftConfig(ratio_n=n, swap=swap, partners=partners)


def graft(primary: np.ndarray, partner: np.ndarray, cfg: GraftConfig) -> np.ndarray:
    """Graft one input; rows are the second-to-last axis."""
    primary = np.asarray(primary)
    partner = np.asarray(partner)
    if primary.shape != partner.shape:
        raise ValueError(f"graft shape mismatch: {primary.shape} vs {partner.shape}")
    if cfg.ratio_n == 0:
        return primary
    h = primary.shape[-2]
    g = cfg.graft_rows(h)
    out = primary.copy()
    out[..., g:, :] = partner[..., g:, :]
    if cfg.swap:
        out = np.concatenate([out[..., g:, :], out[..., :g, :]], axis=-2)
    return out


def graft_stack(stack: np.ndarray, cfg: GraftConfig) -> np.ndarray:
    """Graft every sample of a batch-first stack with its configured partner."""
    stack = np.asarray(stack)
    if len(cfg.partners) != stack.shape[0]:
        raise ValueError(f"config is for batch {len(cfg.partners)}, stack has {stack.shape[0]}")
    if cfg.ratio_n == 0:
        return stack
    return np.stack([graft(stack[i], stack[j], cfg) for i, j in enumerate(cfg.partners)])


def graft_batch(targets, sources, hints=None, hint_masks=None, cfg: GraftConfig | None = None):
    """Apply one shared config to each input category independently.

    Returns ``(targets, sources, hints, hint_masks)``; absent categories stay None.
    """
    cats = [targets, sources, hints, hint_masks]
    present = [np.asarray(c) for c in cats if c is not None]
    sizes = {c.shape[0] for c in present}
    if len(sizes) != 1:
        raise ValueError(f"inconsistent batch sizes across categories: {sorted(sizes)}")
    rows = {c.shape[-2] for c in present}
    if len(rows) != 1:
        raise ValueError(f"inconsistent image heights across categories: {sorted(rows)}")
    if cfg is None:
        return tuple(cats)
    return tuple(None if c is None else graft_stack(c, cfg) for c in cats)
