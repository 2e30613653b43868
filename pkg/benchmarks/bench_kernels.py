"""Compiled kernels against the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Every case
first checks that both implementations agree (exactly for rasters, to
1e-12 for IoUs), then reports the best-of-N time per call and the speed-up.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from togkit import _pykernels, kernels
from togkit.geometry import rotation_inverse_map


def _cases(rng):
    pairs = rng.uniform([0, 0, 5, 5, -90], [80, 80, 60, 60, 90], (200, 5))
    a = tuple(pairs[0])
    ring = np.array([[12.3, 8.1], [200.7, 30.2], [180.4, 220.9], [40.2, 190.5], [5.5, 90.0]])
    img = rng.integers(0, 256, (256, 256, 3), dtype=np.uint8)
    mask = rng.random((256, 256)) < 0.5
    inv = rotation_inverse_map(37, 256)
    return {
        "rect_iou (1 pair)": (lambda m: m.rect_iou(a, tuple(pairs[1])), 2000),
        "rect_iou_many (200)": (lambda m: m.rect_iou_many(a, pairs), 50),
        "fill_ring (256x256)": (lambda m: m.fill_ring(np.zeros((256, 256), np.uint8), ring), 200),
        "warp_nearest mask 256": (lambda m: m.warp_nearest(mask, inv, 256, 256), 100),
        "warp_bilinear rgb 256": (lambda m: m.warp_bilinear(img, inv, 256, 256), 50),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    impls = kernels.available()
    if "cython" not in impls:
        print("compiled kernels not built; nothing to compare", file=sys.stderr)
        return 1
    c = impls["cython"]
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24} {'python (us)':>12} {'cython (us)':>12} {'speed-up':>9}")
    for name, (fn, number) in _cases(rng).items():
        want, got = np.asarray(fn(_pykernels)), np.asarray(fn(c))
        # rasters must match exactly; IoUs may differ in the last ulp
        same = np.allclose(want, got, rtol=0, atol=1e-12) if want.dtype.kind == "f" else np.array_equal(want, got)
        if not same:
            print(f"{name}: implementations disagree", file=sys.stderr)
            return 1
        tp = min(timeit.repeat(lambda: fn(_pykernels), number=number, repeat=args.repeat)) / number
        tc = min(timeit.repeat(lambda: fn(c), number=number, repeat=args.repeat)) / number
        print(f"{name:<24} {tp * 1e6:>12.1f} {tc * 1e6:>12.1f} {tp / tc:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
