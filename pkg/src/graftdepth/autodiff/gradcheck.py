"""Finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def _scalar(out: Tensor) -> float:
    if not isinstance(out, Tensor) or not all(n == 1 for n in out.shape):
        shape = getattr(out, "shape", None)
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {shape}")
    return float(out.data.reshape(-1)[0])


def analytic_and_numeric(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-3,
                         dtype=np.float64, probes: int | None = None,
                         seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Return (analytic, central-difference) gradient pairs, one per input.

    With ``probes`` set, only that many randomly chosen entries per input are
    differenced and both arrays of the pair are flat over those entries.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if probes is not None and probes < 1:
        raise ValueError("probes must be positive")
    rng = np.random.default_rng(seed)
    xs = [Tensor(np.array(t.data, dtype=dtype), requires_grad=True, dtype=dtype) for t in inputs]
    out = fn(*xs)
    _scalar(out)
    grads = backward(out)
    analytic = [np.array(grads.of(x), dtype=np.float64) for x in xs]

    pairs = []
    with no_grad():
        for k, x in enumerate(xs):
            flat = x.data.reshape(-1)
            if probes is None or probes >= flat.size:
                idx = np.arange(flat.size)
            else:
                idx = np.sort(rng.choice(flat.size, probes, replace=False))
            num = np.zeros(idx.size)
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                fp = _scalar(fn(*xs))
                flat[i] = orig - eps
                fm = _scalar(fn(*xs))
                flat[i] = orig
                num[j] = (fp - fm) / (2.0 * eps)
            if idx.size == flat.size:
                pairs.append((analytic[k], num.reshape(x.shape)))
            else:
                pairs.append((analytic[k].reshape(-1)[idx], num))
    return pairs


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-3, dtype=np.float64,
               probes: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Inputs are copied to ``dtype`` (float64 by default) before evaluation so the
    finite differences are not dominated by rounding.
    """
    worst = 0.0
    for a, n in analytic_and_numeric(fn, inputs, eps=eps, dtype=dtype, probes=probes, seed=seed):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        err = np.abs(a - n) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
