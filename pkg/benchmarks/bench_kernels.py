"""Time the compiled kernels against the numpy fallback on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--threads 1]

Prints one line per kernel: best wall time of each backend and the speed-up.
"""
import argparse
import time

import numpy as np

from graftdepth import _kernels
from graftdepth._kernels import python as pyk


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(threads, rng):
    # batch 4, 64 x 192 images, widths as in the base-8 network
    src = rng.random((4, 3, 64, 192)).astype(np.float32)
    disp = rng.uniform(0, 40, (4, 64, 192)).astype(np.float32)
    g = rng.standard_normal(src.shape).astype(np.float32)
    gray = rng.random((64, 192)).astype(np.float32)
    codes = pyk.census(gray, 5)
    cost = pyk.cost_volume(codes, codes, 58, 24.0)
    x = rng.standard_normal((4, 8, 64, 192)).astype(np.float32)
    w = rng.standard_normal((8, 8, 3, 3)).astype(np.float32)
    b = np.zeros(8, np.float32)
    gout = rng.standard_normal((4, 8, 64, 192)).astype(np.float32)
    return [
        ("warp forward", lambda m: m.warp_forward(src, disp, 1, threads)),
        ("warp backward", lambda m: m.warp_backward(src, disp, 1, g, True, threads)),
        ("census 5x5", lambda m: m.census(gray, 5)),
        ("census cost volume", lambda m: m.cost_volume(codes, codes, 58, 24.0)),
        ("sgm aggregate 8 paths", lambda m: m.aggregate(cost, 8.0, 96.0, 8, threads)),
        ("conv 3x3 8->8 forward", lambda m: m.conv_same_forward(x, w, b, threads)),
        ("conv 3x3 8->8 weight grad", lambda m: m.conv_same_grad_weight(x, gout, 3, threads)),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--threads", type=int, default=_kernels.num_threads())
    args = parser.parse_args(argv)
    if _kernels.compiled is None:
        raise SystemExit("compiled extension not available; build with `pip install --no-build-isolation -e .`")
    rng = np.random.default_rng(0)
    print(f"threads={args.threads} repeat={args.repeat}")
    print(f"{'kernel':28s} {'cython ms':>10s} {'numpy ms':>10s} {'speed-up':>9s}")
    for name, run in cases(args.threads, rng):
        tc = best_of(lambda: run(_kernels.compiled), args.repeat)
        tp = best_of(lambda: run(pyk), args.repeat)
        print(f"{name:28s} {tc * 1e3:10.2f} {tp * 1e3:10.2f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
