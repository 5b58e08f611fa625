"""Compare the compiled and pure-Python graph-segmentation kernels.

Usage: python3 benchmarks/bench_kernels.py [--sizes 64x48 160x120 320x240] [--repeat 3]
"""
import argparse
import time

import numpy as np

from rdfc import kernels
from rdfc.core import RgbImage
from rdfc.data import random_scene_spec, synth_scene
from rdfc.pseudo import graph_segment


def _edges(h, w, seed):
    """Sorted 8-connected grid edges with random weights, as fed to the kernel."""
    rng = np.random.default_rng(seed)
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel(), idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()])
    b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel(), idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()])
    wt = rng.exponential(10.0, len(a))
    o = np.argsort(wt, kind="stable")
    return a[o].copy(), b[o].copy(), wt[o].copy()


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--sizes", nargs="+", default=["64x48", "160x120", "320x240"])
    p.add_argument("--repeat", type=int, default=3)
    a = p.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    if kernels.c_segment_graph is None:
        print("compiled kernel not built; only the fallback is timed")
    print(f"{'size':>9} {'edges':>8} {'python s':>10} {'cython s':>10} {'speedup':>8} {'equal':>6}")
    for s in a.sizes:
        w, h = (int(v) for v in s.split("x"))
        ea, eb, ew = _edges(h, w, 0)
        args = (ea, eb, ew, h * w, 100.0, 20)
        tp, lp = _time(lambda: np.asarray(kernels.py_segment_graph(*args)), a.repeat)
        if kernels.c_segment_graph is not None:
            tc, lc = _time(lambda: np.asarray(kernels.c_segment_graph(*args)), a.repeat)
            print(f"{s:>9} {len(ea):>8} {tp:>10.4f} {tc:>10.4f} {tp / tc:>7.1f}x {str(np.array_equal(lp, lc)):>6}")
        else:
            print(f"{s:>9} {len(ea):>8} {tp:>10.4f} {'-':>10} {'-':>8} {'-':>6}")
    # end-to-end segmentation of a rendered scene with the active backend
    rec = synth_scene(random_scene_spec(0, (320, 240)), 0)
    t, lab = _time(lambda: graph_segment(RgbImage(rec.rgb.data)), a.repeat)
    print(f"graph_segment 320x240 scene ({kernels.BACKEND}): {t:.4f} s, {lab.max() + 1} segments")


if __name__ == "__main__":
    main()
