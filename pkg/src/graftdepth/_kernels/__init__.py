"""Hot kernels, compiled when available.

The Cython extension is used when it imports; otherwise (or when
``GRAFTDEPTH_PURE_PYTHON=1``) the numpy implementations are used.
"""
import os

from . import _pykernels as python

BACKEND = "python"
compiled = None

if os.environ.get("GRAFTDEPTH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        compiled = None

_impl = compiled if compiled is not None else python

warp_forward = _impl.warp_forward
warp_backward = _impl.warp_backward
census = _impl.census
cost_volume = _impl.cost_volume
aggregate = _impl.aggregate
conv_same_forward = _impl.conv_same_forward
conv_same_grad_weight = _impl.conv_same_grad_weight


def num_threads() -> int:
    """Worker threads for compiled kernels; 1 under ``EPC_DETERMINISTIC=1``."""
    if os.environ.get("EPC_DETERMINISTIC", "") == "1":
        return 1
    return int(os.environ.get("GRAFTDEPTH_THREADS", "0")) or (os.cpu_count() or 1)
